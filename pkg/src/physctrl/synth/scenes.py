"""Procedural scene descriptions for the 2D primitive and layered 3D datasets."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..errors import ConfigError

SHAPE_KINDS = ("circle", "square", "triangle", "star")
SOLID_KINDS = ("cube", "sphere", "cylinder", "cone", "pyramid")


@dataclass(frozen=True)
class ShapeSpec:
    kind: str
    color: tuple[float, float, float]
    center: tuple[float, float]
    size: float
    velocity: tuple[float, float] = (0.0, 0.0)
    # when set, the shape is filled with a seeded noise texture instead of a flat colour
    texture_seed: Optional[int] = None

    @property
    def half_extent(self) -> float:
        return 0.5 * self.size


@dataclass(frozen=True)
class SceneSpec2D:
    canvas: tuple[int, int] = (512, 512)  # (width, height)
    background: tuple[float, float, float] = (0.5, 0.5, 0.5)
    shapes: tuple[ShapeSpec, ...] = ()
    seed: int = 0
    background_texture_seed: Optional[int] = None
    texture_cell: int = 1  # side of one noise cell in pixels

    @property
    def is_static(self) -> bool:
        return all(s.velocity == (0.0, 0.0) for s in self.shapes)


@dataclass(frozen=True)
class SceneParams2D:
    """Ranges for :func:`random_scene_2d`. Sizes in pixels, speeds in pixels/second."""

    canvas: tuple[int, int] = (512, 512)
    n_shapes: tuple[int, int] = (1, 3)
    size: tuple[float, float] = (40.0, 110.0)
    speed: tuple[float, float] = (64.0, 128.0)
    kinds: tuple[str, ...] = SHAPE_KINDS
    textured: bool = False

    def __post_init__(self):
        lo, hi = self.n_shapes
        if not (1 <= lo <= hi):
            raise ConfigError(f"shape count range {self.n_shapes} is degenerate")
        if not (0 < self.size[0] <= self.size[1]):
            raise ConfigError(f"size range {self.size} is degenerate")
        if not (0 <= self.speed[0] <= self.speed[1]):
            raise ConfigError(f"speed range {self.speed} is degenerate")
        if self.size[1] >= min(self.canvas):
            raise ConfigError(f"max size {self.size[1]} does not fit canvas {self.canvas}")
        if not self.kinds or any(k not in SHAPE_KINDS for k in self.kinds):
            raise ConfigError(f"unknown shape kinds in {self.kinds}")

    def scaled(self, canvas: tuple[int, int]) -> "SceneParams2D":
        """Same ranges rescaled to another canvas width."""
        f = canvas[0] / self.canvas[0]
        return replace(
            self,
            canvas=canvas,
            size=(self.size[0] * f, self.size[1] * f),
            speed=(self.speed[0] * f, self.speed[1] * f),
        )


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def derive_seed(*key: int) -> int:
    """Stable 63-bit seed from an integer key tuple."""
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1, np.uint64)[0] >> np.uint64(1))


def _random_color(rng: np.random.Generator) -> tuple[float, float, float]:
    # saturated-ish colours so shapes stand out from the background
    h = rng.random()
    s = rng.uniform(0.55, 1.0)
    v = rng.uniform(0.6, 1.0)
    i = int(h * 6) % 6
    f = h * 6 - int(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]
    return tuple(float(x) for x in rgb)  # type: ignore[return-value]


def random_scene_2d(seed: int, params: SceneParams2D = SceneParams2D()) -> SceneSpec2D:
    rng = _rng(seed, 2)
    w, h = params.canvas
    n = int(rng.integers(params.n_shapes[0], params.n_shapes[1] + 1))
    bg_level = rng.uniform(0.08, 0.35)
    tint = rng.uniform(-0.04, 0.04, size=3)
    background = tuple(float(np.clip(bg_level + d, 0.0, 1.0)) for d in tint)
    shapes = []
    for j in range(n):
        kind = params.kinds[int(rng.integers(len(params.kinds)))]
        size = float(rng.uniform(*params.size))
        half = size / 2
        cx = float(rng.uniform(half, w - half))
        cy = float(rng.uniform(half, h - half))
        speed = float(rng.uniform(*params.speed))
        angle = float(rng.uniform(0, 2 * math.pi))
        vel = (speed * math.cos(angle), speed * math.sin(angle))
        tex = derive_seed(seed, 7, j) if params.textured else None
        shapes.append(ShapeSpec(kind, _random_color(rng), (cx, cy), size, vel, tex))
    bg_tex = derive_seed(seed, 11) if params.textured else None
    # one noise cell per pixel of a 32-wide grid keeps the texture from averaging out when downsampled
    cell = max(1, w // 32) if params.textured else 1
    return SceneSpec2D((w, h), background, tuple(shapes), int(seed), bg_tex, cell)


def _fold(x: float, v: float, dt: float, half: float, extent: int) -> tuple[float, float]:
    """Uniform motion inside [half, extent-half] with mirror reflections at the ends."""
    if v == 0.0 or dt == 0.0:
        return x, v
    span = extent - 2.0 * half
    if span <= 0:
        return x, v
    u = (x - half) + v * dt
    m = math.fmod(u, 2.0 * span)
    if m < 0:
        m += 2.0 * span
    if m <= span:
        return half + m, v
    return half + (2.0 * span - m), -v


def advance(scene: SceneSpec2D, dt: float) -> SceneSpec2D:
    """Move every shape forward by ``dt`` seconds with elastic edge reflections."""
    if dt < 0:
        raise ConfigError(f"cannot advance by negative time {dt}")
    if dt == 0 or scene.is_static:
        return scene
    w, h = scene.canvas
    moved = []
    for s in scene.shapes:
        x, vx = _fold(s.center[0], s.velocity[0], dt, s.half_extent, w)
        y, vy = _fold(s.center[1], s.velocity[1], dt, s.half_extent, h)
        moved.append(replace(s, center=(x, y), velocity=(vx, vy)))
    return replace(scene, shapes=tuple(moved))


@dataclass(frozen=True)
class SolidSpec:
    kind: str
    color: tuple[float, float, float]
    depth: float  # metres
    center: tuple[float, float]  # screen pixels
    size: float  # screen pixels


@dataclass(frozen=True)
class SceneSpec3D:
    canvas: tuple[int, int]
    objects: tuple[SolidSpec, ...]
    focus_depth: float
    wall_depth: float
    wall_color: tuple[float, float, float] = (0.55, 0.55, 0.55)
    light_azimuth: Optional[float] = None  # radians
    seed: int = 0

    @property
    def focus_object(self) -> SolidSpec:
        return min(self.objects, key=lambda o: abs(o.depth - self.focus_depth))


@dataclass(frozen=True)
class SceneParams3D:
    canvas: tuple[int, int] = (512, 512)
    n_objects: tuple[int, int] = (2, 4)
    depth: tuple[float, float] = (1.0, 6.0)  # d_min, d_max in metres
    size_at_1m: tuple[float, float] = (120.0, 200.0)
    with_light: bool = True

    def __post_init__(self):
        if not (2 <= self.n_objects[0] <= self.n_objects[1]):
            raise ConfigError(f"object count range {self.n_objects} is degenerate")
        if not (0 < self.depth[0] < self.depth[1]):
            raise ConfigError(f"depth range {self.depth} is degenerate")


def random_scene_3d(seed: int, params: SceneParams3D = SceneParams3D()) -> SceneSpec3D:
    rng = _rng(seed, 3)
    w, h = params.canvas
    n = int(rng.integers(params.n_objects[0], params.n_objects[1] + 1))
    d_min, d_max = params.depth
    # stratify depths so they are pairwise distinct and ordered front to back
    edges = np.linspace(d_min, d_max, n + 1)
    depths = [float(rng.uniform(edges[i] + 0.1 * (edges[i + 1] - edges[i]), edges[i + 1])) for i in range(n)]
    depths[0] = float(d_min)  # the focus target sits at the front
    scale = w / 512.0
    objects = []
    for i, d in enumerate(depths):
        kind = SOLID_KINDS[int(rng.integers(len(SOLID_KINDS)))]
        size = float(rng.uniform(*params.size_at_1m)) * scale / math.sqrt(d)
        half = size / 2
        cx = float(rng.uniform(half, w - half))
        # nearer objects sit lower in frame, like objects on a ground plane
        horizon = 0.35 * h
        cy = float(np.clip(horizon + (h - horizon) * (d_min / d) * 0.8, half, h - half))
        objects.append(SolidSpec(kind, _random_color(rng), d, (cx, cy), size))
    light = float(rng.uniform(0, 2 * math.pi)) if params.with_light else None
    wall = tuple(float(x) for x in rng.uniform(0.45, 0.7, size=3))
    return SceneSpec3D((w, h), tuple(objects), depths[0], d_max * 1.5, wall, light, int(seed))
