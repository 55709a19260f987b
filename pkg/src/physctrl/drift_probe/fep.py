"""Single-step probe generation and the drift metrics computed from it."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from ..adapter_net.model import Checkpoint, model_forward
from ..adapter_net.train import LatentCodec, text_embedding
from ..errors import ArtifactIOError, ContractError, DomainError, NumericalError
from .embed import EmbeddingProvider, EmbeddingSet, StatsProvider, embed_frame_sets
from .frechet import frechet_distance, gaussian_fit

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("step", "ssf", "ssfd", "ssf_base", "ssfd_base", "v_drift_cumulative")


@dataclass(frozen=True)
class ProbeConfig:
    latent_seed: int = 0
    n_frames: int = 4
    denoise_steps: int = 1
    c: float = 0.0
    mode: str = "joint"
    chunk: int = 16


def probe_latent(seed: int, n_frames: int, codec: LatentCodec, dtype=torch.float64) -> torch.Tensor:
    g = torch.Generator()
    g.manual_seed(int(seed))
    return torch.randn((n_frames * codec.tokens_per_frame, codec.dim), generator=g, dtype=dtype)


@torch.no_grad()
def fep_generate(
    checkpoint: Checkpoint,
    prompts: Sequence[str],
    probe: ProbeConfig = ProbeConfig(),
    codec: Optional[LatentCodec] = None,
    pristine: bool = False,
) -> list[np.ndarray]:
    """Euler-integrate the velocity field from t=1 to 0 for every prompt.

    Every prompt starts from the same latent. Returns one
    ``(n_frames, 32, 32, 3)`` array per prompt.
    """
    if probe.denoise_steps < 1 or probe.n_frames < 1:
        raise DomainError("denoise_steps and n_frames must be >= 1")
    cfg = checkpoint.config
    codec = codec or LatentCodec(cfg.model_dim)
    x1 = probe_latent(probe.latent_seed, probe.n_frames, codec, checkpoint.dtype)
    out = []
    for start in range(0, len(prompts), probe.chunk):
        batch = prompts[start : start + probe.chunk]
        text = torch.stack([torch.as_tensor(text_embedding(p, cfg.n_text_tokens, cfg.text_dim), dtype=x1.dtype) for p in batch])
        x = x1.expand(len(batch), *x1.shape).clone()
        dt = 1.0 / probe.denoise_steps
        for _ in range(probe.denoise_steps):
            v = model_forward(x, text, probe.c, checkpoint, probe.mode, pristine) - x
            x = x - dt * v
        if not torch.all(torch.isfinite(x)):
            raise NumericalError("probe generation produced non-finite latents")
        out.extend(codec.decode(xi.numpy()) for xi in x)
    return out


def probe_embeddings(checkpoint, prompts, provider: EmbeddingProvider, probe: ProbeConfig = ProbeConfig(), pristine: bool = False) -> EmbeddingSet:
    frames = fep_generate(checkpoint, prompts, probe, pristine=pristine)
    return embed_frame_sets(provider, frames, prompts)


def _check_pair(a: EmbeddingSet, b: EmbeddingSet) -> None:
    if a.provider != b.provider:
        raise ContractError(f"embedding providers differ: {a.provider!r} vs {b.provider!r}")
    if list(a.prompts) != list(b.prompts):
        raise ContractError("embedding sets cover different prompt lists")


def ssf_details(ref: EmbeddingSet, new: EmbeddingSet) -> tuple[float, int]:
    """Mean per-prompt cosine similarity and the number of zero-norm rows skipped."""
    _check_pair(ref, new)
    cos = []
    skipped = 0
    for a, b in zip(ref.vectors, new.vectors):
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            skipped += 1
            continue
        cos.append(1.0 if np.array_equal(a, b) else float(np.clip(a @ b / (na * nb), -1.0, 1.0)))
    if skipped:
        log.warning("ssf: skipped %d zero-norm embedding rows", skipped)
    if not cos:
        raise NumericalError("every embedding row has zero norm")
    return float(np.mean(cos)), skipped


def ssf_score(ref: EmbeddingSet, new: EmbeddingSet) -> float:
    return ssf_details(ref, new)[0]


def ssfd_score(ref: EmbeddingSet, new: EmbeddingSet) -> float:
    _check_pair(ref, new)
    return frechet_distance(gaussian_fit(ref.vectors), gaussian_fit(new.vectors))


def fep_baseline(pristine: Checkpoint, prompts, seeds: Sequence[int], provider: EmbeddingProvider, probe: ProbeConfig = ProbeConfig()) -> dict:
    """Self-comparison of the frozen backbone across latent seeds.

    The first seed is the reference; metrics against each other seed are
    averaged.
    """
    if len(seeds) < 2:
        raise DomainError(f"baseline needs at least 2 seeds, got {len(seeds)}")
    sets = [probe_embeddings(pristine, prompts, provider, _with_seed(probe, s), pristine=True) for s in seeds]
    ssf = [ssf_score(sets[0], s) for s in sets[1:]]
    ssfd = [ssfd_score(sets[0], s) for s in sets[1:]]
    return {"ssf_base": float(np.mean(ssf)), "ssfd_base": float(np.mean(ssfd)), "seeds": list(map(int, seeds))}


def _with_seed(probe: ProbeConfig, seed: int) -> ProbeConfig:
    return ProbeConfig(int(seed), probe.n_frames, probe.denoise_steps, probe.c, probe.mode, probe.chunk)


@dataclass
class DriftPoint:
    step: int
    ssf: float
    ssfd: float


@dataclass
class DriftSeries:
    points: list = field(default_factory=list)

    def append(self, step: int, ssf: float, ssfd: float) -> None:
        if self.points and step <= self.points[-1].step:
            raise DomainError(f"drift steps must increase: {step} after {self.points[-1].step}")
        self.points.append(DriftPoint(int(step), float(ssf), float(ssfd)))

    def __len__(self) -> int:
        return len(self.points)


def drift_rate(series: DriftSeries) -> float:
    """Least-squares slope of SS-FD against training step."""
    if len(series) < 2:
        raise DomainError(f"drift rate needs at least 2 points, got {len(series)}")
    x = np.array([p.step for p in series.points], dtype=np.float64)
    y = np.array([p.ssfd for p in series.points], dtype=np.float64)
    xc = x - x.mean()
    return float(xc @ (y - y.mean()) / (xc @ xc))


def write_report(path, series: DriftSeries, baseline: dict) -> None:
    """CSV with one row per probe; the cumulative drift rate is blank until 2 points exist."""
    rows = []
    for k, p in enumerate(series.points):
        v = drift_rate(DriftSeries(series.points[: k + 1])) if k >= 1 else float("nan")
        rows.append([p.step, _fmt(p.ssf), _fmt(p.ssfd), _fmt(baseline["ssf_base"]), _fmt(baseline["ssfd_base"]), "" if math.isnan(v) else _fmt(v)])
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            w.writerows(rows)
    except OSError as exc:
        raise ArtifactIOError(f"cannot write FEP report ({exc.strerror})", path) from exc


def read_report(path) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise ArtifactIOError(f"cannot read FEP report ({exc.strerror})", path) from exc


def _fmt(x: float) -> str:
    return repr(float(x))


def default_provider() -> StatsProvider:
    return StatsProvider(64, 0)
