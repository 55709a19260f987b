"""Data-free spectral diagnostics of adapted checkpoints.

Intruder dimensions compare singular vectors of pre-trained and adapted
projections; the principal-component showdown probes the attention paths
with the backbone's own dominant directions and measures the effective rank
of what comes out.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .adapter_net.config import TARGETS
from .adapter_net.layers import CondAdapter, adapter_kv, embed_condition, scaled_attention
from .adapter_net.model import Checkpoint
from .errors import ArtifactIOError, ContractError, DomainError, NumericalError

RANK_METHODS = ("threshold", "entropy")
WEIGHTINGS = ("rms", "unit")


@dataclass
class SvdResult:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.T


def svd(w: np.ndarray, name: str = "matrix") -> SvdResult:
    """Thin SVD; each U column is flipped so its largest-magnitude entry is positive."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or not np.all(np.isfinite(w)):
        raise NumericalError(f"{name}: SVD needs a finite 2-D matrix")
    try:
        u, s, vt = np.linalg.svd(w, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{name}: SVD did not converge") from exc
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[idx, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    return SvdResult(u * signs, s, vt.T * signs)


@dataclass
class IntruderReport:
    block: Optional[int]
    target: Optional[str]
    k: int
    eps: float
    n_intruders: int
    s_max: list

    def to_dict(self) -> dict:
        return {"block": self.block, "target": self.target, "k": self.k, "eps": self.eps, "n_intruders": self.n_intruders, "s_max": self.s_max}


def intruder_count(w_pre, w_lora, k: int = 64, eps: float = 0.5, block=None, target=None) -> IntruderReport:
    """Top-k adapted left singular vectors whose best |cos| to any pre-trained one is below eps."""
    w_pre, w_lora = np.asarray(w_pre, dtype=np.float64), np.asarray(w_lora, dtype=np.float64)
    if w_pre.shape != w_lora.shape:
        raise ContractError(f"shape mismatch {w_pre.shape} vs {w_lora.shape}")
    if not (1 <= k <= min(w_pre.shape)):
        raise DomainError(f"k={k} must lie in [1, {min(w_pre.shape)}]")
    u_pre = svd(w_pre, "W_pre").U
    u_new = svd(w_lora, "W_lora").U[:, :k]
    # columns are unit length, so the inner product is the cosine
    s_max = np.clip(np.max(np.abs(u_new.T @ u_pre), axis=1), 0.0, 1.0)
    return IntruderReport(block, target, k, eps, int(np.sum(s_max < eps)), [float(s) for s in s_max])


def effective_rank(s, method: str = "threshold", tau: float = 0.1) -> float:
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0 or s[0] <= 0:
        raise DomainError("effective rank needs a spectrum with a positive leading value")
    if np.any(np.diff(s) > 1e-12 * s[0]) or np.any(s < 0):
        raise DomainError("spectrum must be non-negative and non-increasing")
    if method == "threshold":
        return float(np.sum(s / s[0] > tau))
    if method == "entropy":
        p = s / s.sum()
        p = p[p > 0]
        return float(np.exp(-np.sum(p * np.log(p))))
    raise DomainError(f"unknown rank method {method!r}; expected one of {RANK_METHODS}")


@dataclass
class SpectrumReport:
    s_text: np.ndarray
    s_cond: np.ndarray
    r_text: float
    r_cond: float
    r_text_entropy: float
    r_cond_entropy: float
    c: float
    block: Optional[int] = None
    extra: dict = field(default_factory=dict)


def _normalized_spectrum(y: np.ndarray) -> np.ndarray:
    s = np.linalg.svd(y.reshape(y.shape[0], -1), compute_uv=False)
    if s[0] == 0:
        return s
    return s / s[0]


def _rms(x: torch.Tensor) -> torch.Tensor:
    return x * torch.rsqrt(x.pow(2).mean(dim=-1, keepdim=True))


def principal_showdown(
    wq,
    wk,
    wv,
    adapter: CondAdapter,
    c_strong: float = 1.0,
    n: int = 64,
    tau: float = 0.1,
    weighting: str = "rms",
) -> SpectrumReport:
    """Probe text and conditional attention with the top-N singular directions.

    ``weighting="unit"`` feeds the unit singular vectors straight into
    attention. ``"rms"`` first applies the RMS normalisation the block itself
    applies to queries and text keys, so logits have the magnitude they have
    in the forward pass.
    """
    if weighting not in WEIGHTINGS:
        raise DomainError(f"weighting must be one of {WEIGHTINGS}, got {weighting!r}")
    wq, wk, wv = (np.asarray(w, dtype=np.float64) for w in (wq, wk, wv))
    if wq.shape[1] != wk.shape[1]:
        # text probes live in the input spaces of W_q and W_k; they only meet when those widths agree
        raise ContractError(f"showdown needs text_dim == model_dim, got {wk.shape[1]} and {wq.shape[1]}")
    if not (1 <= n <= min(min(w.shape) for w in (wq, wk, wv))):
        raise DomainError(f"N={n} exceeds the projection dimensions")
    q_test = torch.from_numpy(svd(wq.T, "W_q'^T").U[:, :n].T.copy())
    k_test = torch.from_numpy(svd(wk.T, "W_k'^T").U[:, :n].T.copy())
    v_test = torch.from_numpy(svd(wv.T, "W_v'^T").U[:, :n].T.copy())
    if weighting == "rms":
        q_test, k_test = _rms(q_test), _rms(k_test)
    with torch.no_grad():
        y_text = scaled_attention(q_test, k_test, v_test)
        dtype = adapter.kproj_w.dtype
        k_cond, v_cond = adapter_kv(embed_condition(torch.tensor(c_strong, dtype=dtype), adapter), adapter)
        y_cond = scaled_attention(q_test.to(dtype), k_cond, v_cond)
    s_text = _normalized_spectrum(y_text.numpy())
    s_cond = _normalized_spectrum(y_cond.double().numpy())
    if s_cond[0] == 0:
        # an untouched adapter (zero value projector) carries no signal at all
        r_cond = r_cond_e = 0.0
    else:
        r_cond, r_cond_e = effective_rank(s_cond, "threshold", tau), effective_rank(s_cond, "entropy")
    return SpectrumReport(
        s_text, s_cond, effective_rank(s_text, "threshold", tau), r_cond, effective_rank(s_text, "entropy"), r_cond_e, float(c_strong),
        extra={"weighting": weighting, "n": n, "tau": tau},
    )


def showdown_checkpoint(ckpt: Checkpoint, block: Optional[int] = None, c_strong: float = 1.0, n: int = 64, tau: float = 0.1, weighting: str = "rms") -> SpectrumReport:
    """Showdown on one adapter block (default: the shallowest one) of a checkpoint."""
    blocks = ckpt.config.adapter_set
    if not blocks:
        raise ContractError("checkpoint has no adapter blocks")
    block = blocks[0] if block is None else block
    adapter = ckpt.adapter(block)
    if adapter is None:
        raise ContractError(f"block {block} has no adapter")
    w = {t: ckpt.merged_weight(block, t).numpy() for t in ("q", "k", "v")}
    adapter = CondAdapter(*(getattr(adapter, f).detach() for f in ("mlp0_w", "mlp0_b", "mlp1_w", "mlp1_b", "kproj_w", "kproj_b", "vproj_w", "vproj_b")), n_tokens=adapter.n_tokens)
    rep = principal_showdown(w["q"], w["k"], w["v"], adapter, c_strong, min(n, ckpt.config.model_dim, ckpt.config.text_dim), tau, weighting)
    rep.block = block
    return rep


@dataclass
class DepthSweep:
    targets: tuple
    reports: list  # IntruderReport per (block, target), block-major

    def counts(self) -> np.ndarray:
        """n_blocks x len(targets) intruder counts."""
        n_blocks = len(self.reports) // len(self.targets)
        return np.array([r.n_intruders for r in self.reports]).reshape(n_blocks, len(self.targets))

    @property
    def total(self) -> int:
        return int(sum(r.n_intruders for r in self.reports))

    def s_max_grid(self, target: str) -> np.ndarray:
        return np.array([r.s_max for r in self.reports if r.target == target])


def depth_sweep(pre: Checkpoint, post: Checkpoint, targets: Sequence[str] = ("v",), k: int = 64, eps: float = 0.5) -> DepthSweep:
    if pre.config.n_blocks != post.config.n_blocks or pre.config.model_dim != post.config.model_dim or pre.config.text_dim != post.config.text_dim:
        raise ContractError("checkpoints have different architectures")
    bad = [t for t in targets if t not in TARGETS]
    if bad or not targets:
        raise DomainError(f"targets must be a non-empty subset of {TARGETS}, got {list(targets)}")
    reports = []
    for i in range(pre.config.n_blocks):
        for t in targets:
            before = pre.merged_weight(i, t).numpy()
            after = post.merged_weight(i, t).numpy()
            reports.append(intruder_count(before, after, min(k, *before.shape), eps, block=i, target=t))
    return DepthSweep(tuple(targets), reports)


def write_heatmap_csv(path, sweep: DepthSweep) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["block", "target", "vector_rank", "s_max", "is_intruder"])
            for r in sweep.reports:
                for j, s in enumerate(r.s_max):
                    w.writerow([r.block, r.target, j + 1, repr(s), int(s < r.eps)])
    except OSError as exc:
        raise ArtifactIOError(f"cannot write heatmap ({exc.strerror})", path) from exc


def write_spectrum_csv(path, report: SpectrumReport) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "index", "sigma_normalized"])
            for kind, s in (("text", report.s_text), ("cond", report.s_cond)):
                for j, v in enumerate(s):
                    w.writerow([kind, j, repr(float(v))])
    except OSError as exc:
        raise ArtifactIOError(f"cannot write spectrum ({exc.strerror})", path) from exc


def summary_dict(sweep: DepthSweep, report: Optional[SpectrumReport], k: int, eps: float) -> dict:
    counts = sweep.counts()
    out = {
        "k": k,
        "eps": eps,
        "targets": list(sweep.targets),
        "intruders_per_block": {str(i): {t: int(counts[i, j]) for j, t in enumerate(sweep.targets)} for i in range(counts.shape[0])},
        "total_intruders": sweep.total,
    }
    if report is not None:
        out.update(
            {
                "showdown_block": report.block,
                "c_strong": report.c,
                "R_text": report.r_text,
                "R_cond": report.r_cond,
                "R_text_entropy": report.r_text_entropy,
                "R_cond_entropy": report.r_cond_entropy,
                **report.extra,
            }
        )
    return out


def write_summary(path, summary: dict) -> None:
    try:
        Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write summary ({exc.strerror})", path) from exc
