"""Frame embedding providers, embedding sets, and the bundled prompt list."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from scipy import ndimage

from .. import tensorio
from ..errors import ArtifactIOError, ContractError

CATEGORIES = {
    "animals": ["a fox trotting through snow", "a cat stretching on a windowsill", "a horse galloping across a field", "a flock of geese taking off", "a dog catching a frisbee", "an owl turning its head", "a goldfish circling a bowl", "a deer drinking at a stream"],
    "architecture": ["a gothic cathedral at dusk", "a glass skyscraper reflecting clouds", "a stone bridge over a canal", "a lighthouse on a cliff", "a spiral staircase from below", "a wooden temple in the rain", "a brutalist library facade", "a row of painted townhouses"],
    "food": ["steam rising from a bowl of ramen", "a chef slicing tomatoes", "pancakes stacked with syrup", "coffee poured into a cup", "a pizza coming out of an oven", "fresh bread on a cutting board", "a bowl of ripe cherries", "chocolate melting in a pan"],
    "humans": ["a dancer spinning on stage", "a child blowing bubbles", "a runner crossing a finish line", "an old man reading a newspaper", "a violinist performing", "two friends laughing at a table", "a skateboarder doing a trick", "a painter at an easel"],
    "lifestyle": ["a cozy living room with a fireplace", "a cyclist commuting in the city", "a yoga session at sunrise", "a family picnic in a park", "a desk with a laptop and plants", "friends playing board games", "a morning jog along a river", "a market stall with lanterns"],
    "plants": ["a sunflower swaying in the wind", "cherry blossoms falling", "a fern unfurling", "moss on a forest floor", "a cactus in the desert", "ivy climbing a brick wall", "tulip fields in spring", "a bonsai tree on a table"],
    "scenery": ["waves crashing on a rocky shore", "a misty mountain valley", "the northern lights over a lake", "a desert at golden hour", "a waterfall in a jungle", "a snowy pine forest", "a city skyline at night", "rolling hills under clouds"],
    "vehicles": ["a steam train crossing a bridge", "a sailboat on a calm sea", "a race car on a track", "a hot air balloon rising", "a bicycle leaning on a fence", "a tram in the rain", "a jet taking off", "a vintage car on a coastal road"],
}


def default_prompts() -> list[str]:
    return [p for group in CATEGORIES.values() for p in group]


def read_prompts(path) -> list[str]:
    """One prompt per line; blank lines are skipped."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read prompt file ({exc.strerror})", path) from exc
    prompts = [ln.strip() for ln in lines if ln.strip()]
    if not prompts:
        raise ContractError(f"prompt file {path} is empty")
    return prompts


class EmbeddingProvider(Protocol):
    name: str
    dim: int

    def embed(self, frames: Sequence[np.ndarray]) -> np.ndarray: ...


class StatsProvider:
    """Seeded random projection of coarse colour means and gradient-orientation histograms.

    Per frame: 8x8 block means of each channel (192 values) and an 8-bin
    magnitude-weighted histogram of luminance gradient orientation. Features
    are averaged over frames and projected to ``dim`` values.
    """

    GRID = 8
    BINS = 8

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.name = f"stats-d{dim}-s{seed}"
        n_feat = self.GRID * self.GRID * 3 + self.BINS
        self.proj = np.random.default_rng(seed).standard_normal((n_feat, dim)) / np.sqrt(n_feat)

    def features(self, frame: np.ndarray) -> np.ndarray:
        frame = np.asarray(frame, dtype=np.float64)
        h, w = frame.shape[:2]
        g = self.GRID
        if h % g or w % g:
            raise ContractError(f"frame size {w}x{h} is not a multiple of {g}")
        means = frame.reshape(g, h // g, g, w // g, 3).mean(axis=(1, 3)).ravel()
        lum = frame @ np.array([0.2126, 0.7152, 0.0722])
        gx = ndimage.sobel(lum, axis=1, mode="nearest")
        gy = ndimage.sobel(lum, axis=0, mode="nearest")
        mag = np.hypot(gx, gy)
        bins = ((np.arctan2(gy, gx) + np.pi) / (2 * np.pi) * self.BINS).astype(int) % self.BINS
        hist = np.bincount(bins.ravel(), weights=mag.ravel(), minlength=self.BINS) / mag.size
        return np.concatenate([means, hist])

    def embed(self, frames: Sequence[np.ndarray]) -> np.ndarray:
        if len(frames) == 0:
            raise ContractError("cannot embed an empty frame set")
        feats = np.mean([self.features(f) for f in frames], axis=0)
        return feats @ self.proj


@dataclass
class EmbeddingSet:
    provider: str
    prompts: list
    vectors: np.ndarray  # (P, D)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.prompts):
            raise ContractError(f"{len(self.prompts)} prompts but vectors of shape {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise ContractError("embedding set contains NaN or Inf")

    def save(self, path) -> None:
        path = Path(path)
        tensorio.save(path, {"embeddings": self.vectors}, {"provider": self.provider, "count": len(self.prompts)})
        sidecar = path.with_name(path.name + ".prompts.json")
        try:
            sidecar.write_text(json.dumps({"provider": self.provider, "prompts": list(self.prompts)}, indent=2) + "\n")
        except OSError as exc:
            raise ArtifactIOError(f"cannot write prompt sidecar ({exc.strerror})", sidecar) from exc

    @classmethod
    def load(cls, path) -> "EmbeddingSet":
        path = Path(path)
        arrays, meta = tensorio.load(path)
        sidecar = path.with_name(path.name + ".prompts.json")
        try:
            side = json.loads(sidecar.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ArtifactIOError(f"cannot read prompt sidecar ({exc})", sidecar) from exc
        if "embeddings" not in arrays:
            raise ArtifactIOError("container has no 'embeddings' tensor", path)
        return cls(meta.get("provider", side.get("provider", "")), side["prompts"], arrays["embeddings"].astype(np.float64))


def embed_frame_sets(provider: EmbeddingProvider, frame_sets: Sequence, prompts: Sequence[str]) -> EmbeddingSet:
    vectors = np.stack([provider.embed(fs) for fs in frame_sets])
    return EmbeddingSet(provider.name, list(prompts), vectors)
