"""Gaussian fits of embedding sets and the Fréchet distance between them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, DomainError, NumericalError

PSD_TOL = 1e-9
FD_CLAMP = 1e-8


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ContractError(f"covariance shape {self.cov.shape} does not match mean of length {d}")
        if not np.allclose(self.cov, self.cov.T, rtol=0, atol=PSD_TOL):
            raise NumericalError("covariance is not symmetric within 1e-9")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def gaussian_fit(vectors: np.ndarray) -> GaussianStats:
    """Sample mean and unbiased (P-1) covariance, symmetrised."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DomainError(f"need at least 2 embeddings to fit a Gaussian, got shape {x.shape}")
    mu = x.mean(axis=0)
    xc = x - mu
    cov = xc.T @ xc / (x.shape[0] - 1)
    return GaussianStats(mu, 0.5 * (cov + cov.T))


def _psd_sqrt(a: np.ndarray, what: str) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    scale = max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    if w.size and w.min() < -PSD_TOL * scale:
        raise NumericalError(f"{what} is not positive semi-definite (min eigenvalue {w.min():.3e})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def trace_sqrt_product(s1: np.ndarray, s2: np.ndarray) -> float:
    """Tr((S1 S2)^1/2) computed as Tr((S1^1/2 S2 S1^1/2)^1/2), which is symmetric."""
    r1 = _psd_sqrt(s1, "first covariance")
    m = r1 @ s2 @ r1
    w = np.linalg.eigvalsh(0.5 * (m + m.T))
    scale = max(1.0, float(np.max(np.abs(w))))
    if w.min() < -PSD_TOL * scale:
        raise NumericalError(f"covariance product has negative eigenvalue {w.min():.3e}")
    return float(np.sum(np.sqrt(np.clip(w, 0.0, None))))


def frechet_distance(g1: GaussianStats, g2: GaussianStats) -> float:
    if g1.dim != g2.dim:
        raise ContractError(f"dimension mismatch: {g1.dim} vs {g2.dim}")
    if np.array_equal(g1.mean, g2.mean) and np.array_equal(g1.cov, g2.cov):
        return 0.0
    diff = g1.mean - g2.mean
    # average both orders so the result is symmetric to rounding
    tr = 0.5 * (trace_sqrt_product(g1.cov, g2.cov) + trace_sqrt_product(g2.cov, g1.cov))
    fd = float(diff @ diff + np.trace(g1.cov) + np.trace(g2.cov) - 2.0 * tr)
    if fd < -FD_CLAMP * max(1.0, float(np.trace(g1.cov) + np.trace(g2.cov))):
        raise NumericalError(f"Fréchet distance came out negative ({fd:.3e})")
    return max(fd, 0.0)
