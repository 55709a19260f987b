"""Control scalars, their physical mappings, and the pyramid sampling plan.

A control scalar ``c`` always lives in [-1, 1]. Shutter and aperture use a
geometric (log-space) interpolation between two physical endpoints; colour
temperature interpolates linearly in mired space.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ConfigError, DomainError

DEFAULT_LAYER_COUNTS = (9, 7, 5, 3, 1)


def check_control(c: float) -> float:
    c = float(c)
    if not (-1.0 <= c <= 1.0) or math.isnan(c):
        raise DomainError(f"control scalar {c!r} outside [-1, 1]")
    return c


@dataclass(frozen=True)
class LogRange:
    lo: float
    hi: float

    def __post_init__(self):
        if not (0.0 < self.lo < self.hi):
            raise ConfigError(f"log range needs 0 < lo < hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class KelvinRange:
    k_lo: float = 2000.0
    k_hi: float = 12000.0
    k_ref: float = 6500.0

    def __post_init__(self):
        if not (1000.0 <= self.k_lo < self.k_hi <= 15000.0):
            raise ConfigError(f"kelvin range [{self.k_lo}, {self.k_hi}] not inside [1000, 15000]")
        if not (self.k_lo <= self.k_ref <= self.k_hi):
            raise ConfigError(f"reference {self.k_ref} K outside [{self.k_lo}, {self.k_hi}]")


# Defaults chosen to give visually distinct extremes; none are published values.
FPS_RANGE = LogRange(4.0, 256.0)
FSTOP_RANGE = LogRange(1.2, 16.0)
KELVIN_RANGE = KelvinRange()


def map_log_centered(c: float, rng: LogRange) -> float:
    """Geometric interpolation: c=-1 -> lo, c=0 -> sqrt(lo*hi), c=+1 -> hi."""
    c = check_control(c)
    if c == -1.0:
        return float(rng.lo)
    if c == 1.0:
        return float(rng.hi)
    t = (c + 1.0) / 2.0
    return math.exp((1.0 - t) * math.log(rng.lo) + t * math.log(rng.hi))


def map_exposure(c: float, fps_range: LogRange = FPS_RANGE) -> float:
    """Exposure duration in seconds, 1 / FPS(c)."""
    return 1.0 / map_log_centered(c, fps_range)


def map_kelvin(c: float, kr: KelvinRange = KELVIN_RANGE, warm_at_negative: bool = True) -> float:
    """Colour temperature for ``c`` by linear interpolation in mired space.

    With ``warm_at_negative`` (the default) c=-1 gives ``k_lo``; flipping it
    reverses the axis.
    """
    c = check_control(c)
    if not warm_at_negative:
        c = -c
    if c == -1.0:
        return float(kr.k_lo)
    if c == 1.0:
        return float(kr.k_hi)
    t = (c + 1.0) / 2.0
    mired = (1.0 - t) * (1e6 / kr.k_lo) + t * (1e6 / kr.k_hi)
    return 1e6 / mired


# Blackbody white-point fit over 1000-15000 K (Tanner Helland's curve fit to
# Mitchell Charity's blackbody table). Inputs are kelvin / 100; outputs 0..255.
_RED_HOT = (329.698727446, -0.1332047592)
_GREEN_COOL = (99.4708025861, -161.1195681661)
_GREEN_HOT = (288.1221695283, -0.0755148492)
_BLUE_COOL = (138.5177312231, -305.0447927307)


def blackbody_rgb(kelvin: float) -> tuple[float, float, float]:
    """Approximate white point of a blackbody radiator on a 0..255 scale."""
    k = float(kelvin)
    if not (1000.0 <= k <= 15000.0):
        raise DomainError(f"temperature {k} K outside approximation domain [1000, 15000]")
    t = k / 100.0
    if t <= 66.0:
        red = 255.0
        green = _GREEN_COOL[0] * math.log(t) + _GREEN_COOL[1]
    else:
        red = _RED_HOT[0] * (t - 60.0) ** _RED_HOT[1]
        green = _GREEN_HOT[0] * (t - 60.0) ** _GREEN_HOT[1]
    if t >= 66.0:
        blue = 255.0
    elif t <= 19.0:
        blue = 0.0
    else:
        blue = _BLUE_COOL[0] * math.log(t - 10.0) + _BLUE_COOL[1]
    clip = lambda v: min(max(v, 0.0), 255.0)  # noqa: E731
    return clip(red), clip(green), clip(blue)


def kelvin_to_rgb_gains(k: float, k_ref: float = 6500.0) -> tuple[float, float, float]:
    """Per-channel gains that move a ``k_ref`` white point to ``k``."""
    target = blackbody_rgb(k)
    ref = blackbody_rgb(k_ref)
    if float(k) == float(k_ref):
        return (1.0, 1.0, 1.0)
    if min(ref) <= 0.0:
        raise DomainError(f"reference {k_ref} K has a zero channel in the approximation")
    return tuple(t / r for t, r in zip(target, ref))  # type: ignore[return-value]


@dataclass(frozen=True)
class SampledCondition:
    layer_index: int
    bin_index: int
    c: float


@dataclass(frozen=True)
class PyramidPlan:
    layer_counts: tuple[int, ...] = DEFAULT_LAYER_COUNTS
    rng_seed: int = 0

    def __post_init__(self):
        counts = tuple(int(n) for n in self.layer_counts)
        if not counts or any(n < 1 for n in counts):
            raise ConfigError(f"layer counts must be positive, got {list(self.layer_counts)}")
        if not (0 <= int(self.rng_seed) < 2**64):
            raise ConfigError(f"seed {self.rng_seed} is not an unsigned 64-bit integer")
        object.__setattr__(self, "layer_counts", counts)
        object.__setattr__(self, "rng_seed", int(self.rng_seed))

    @property
    def total(self) -> int:
        return sum(self.layer_counts)

    def to_json(self) -> str:
        return json.dumps({"layer_counts": list(self.layer_counts), "seed": self.rng_seed})

    @classmethod
    def from_json(cls, text: str) -> "PyramidPlan":
        data = json.loads(text)
        try:
            return cls(tuple(data["layer_counts"]), int(data["seed"]))
        except KeyError as exc:
            raise ConfigError(f"sampling plan missing key {exc}") from None


def bin_edges(n: int) -> list[float]:
    if int(n) != n or n < 1:
        raise DomainError(f"bin count must be a positive integer, got {n!r}")
    n = int(n)
    return [-1.0 + 2.0 * i / n for i in range(n + 1)]


def _bin_draw(seed: int, layer: int, bin_index: int) -> float:
    # Keyed per (seed, layer, bin) so draws do not depend on iteration order.
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, layer, bin_index])))
    return float(gen.random())


def pyramid_sample(plan: PyramidPlan) -> list[SampledCondition]:
    """One jittered draw inside each equal-width bin of every layer."""
    out = []
    for layer, n in enumerate(plan.layer_counts):
        edges = bin_edges(n)
        for b in range(n):
            lo, hi = edges[b], edges[b + 1]
            u = _bin_draw(plan.rng_seed, layer, b)
            c = lo + u * (hi - lo)
            # keep strictly inside the bin
            if not lo < c < hi:
                c = 0.5 * (lo + hi)
            out.append(SampledCondition(layer, b, c))
    return out


def write_conditions_csv(conditions: Iterable[SampledCondition], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["layer", "bin", "c"])
        for s in conditions:
            writer.writerow([s.layer_index, s.bin_index, repr(s.c)])


def read_conditions_csv(path) -> list[SampledCondition]:
    with open(path, newline="") as fh:
        return [
            SampledCondition(int(row["layer"]), int(row["bin"]), float(row["c"]))
            for row in csv.DictReader(fh)
        ]

