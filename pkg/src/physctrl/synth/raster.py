"""Supersampled 2D rasterizer, sub-frame motion blur, and shutter clips.

Frames are ``(height, width, 3)`` float64 arrays. Values may leave [0, 1]
during accumulation; exporters clamp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from ..control_space import FPS_RANGE, LogRange, SampledCondition, map_exposure
from ..errors import ConfigError, DomainError
from .scenes import SceneSpec2D, ShapeSpec, advance

SUPERSAMPLE = 4  # must be even: the tent footprint starts half a pixel into the sample grid
REC709 = np.array([0.2126, 0.7152, 0.0722])
# textured surfaces keep their base colour and add zero-mean noise, so a textured
# scene differs from its flat twin only in high-frequency content
TEXTURE_GAIN = 1.0

# 5-point star, outer radius 1, apex up (image y grows downward)
_STAR_INNER = 0.4
_STAR = np.array(
    [
        (
            (1.0 if k % 2 == 0 else _STAR_INNER) * math.sin(k * math.pi / 5),
            -(1.0 if k % 2 == 0 else _STAR_INNER) * math.cos(k * math.pi / 5),
        )
        for k in range(10)
    ]
)
_TRIANGLE = np.array([(0.0, -1.0), (1.0, 1.0), (-1.0, 1.0)])


@dataclass
class ClipSample:
    frames: list
    condition: SampledCondition
    physical_value: float
    unit: str
    scene_id: str
    effect: str
    timestamps: list = field(default_factory=list)

    def __post_init__(self):
        shapes = {f.shape for f in self.frames}
        if len(shapes) > 1:
            raise ConfigError(f"clip frames disagree in shape: {sorted(shapes)}")


def luminance(frame: np.ndarray) -> np.ndarray:
    return frame @ REC709


def _inside_polygon(px: np.ndarray, py: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd rule, vectorised over sample points."""
    inside = np.zeros(px.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        crosses = (y0 > py) != (y1 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (px < xint)
    return inside


def shape_mask(kind: str, lx: np.ndarray, ly: np.ndarray, half: float) -> np.ndarray:
    """Point membership in shape-local coordinates (origin at the centre)."""
    if kind == "circle":
        return lx * lx + ly * ly <= half * half
    if kind == "square":
        return (np.abs(lx) <= half) & (np.abs(ly) <= half)
    if kind == "triangle":
        return _inside_polygon(lx, ly, _TRIANGLE * half)
    if kind == "star":
        return _inside_polygon(lx, ly, _STAR * half)
    raise DomainError(f"unknown shape kind {kind!r}")


def _tent_weights(ss: int) -> np.ndarray:
    k = 1.0 - np.abs((np.arange(2 * ss) + 0.5) / ss - 1.0)
    return k / k.sum()


def coverage(kind: str, center: tuple[float, float], half: float, x0: int, y0: int, w: int, h: int) -> np.ndarray:
    """Anti-aliased coverage over the pixel window [x0, x0+w) x [y0, y0+h).

    Point samples on a 4x4 grid per pixel are reconstructed with a separable
    tent (bilinear) filter two pixels wide. The tent weights sum to one over
    neighbouring pixels, so total coverage still equals the shape's area.
    """
    ss = SUPERSAMPLE
    offs = (np.arange(ss) + 0.5) / ss
    # one extra pixel of samples on every side feeds the tent footprint
    xs = (x0 - 1 + np.arange(w + 2)[:, None] + offs[None, :]).ravel() - center[0]
    ys = (y0 - 1 + np.arange(h + 2)[:, None] + offs[None, :]).ravel() - center[1]
    lx, ly = np.meshgrid(xs, ys)
    inside = shape_mask(kind, lx, ly, half).astype(np.float64)
    k = _tent_weights(ss)
    rows = sliding_window_view(inside[ss // 2 :], 2 * ss, axis=0)[::ss][:h] @ k
    return sliding_window_view(rows[:, ss // 2 :], 2 * ss, axis=1)[:, ::ss][:, :w] @ k


@lru_cache(maxsize=64)
def noise_texture(seed: int, size: int, cell: int = 1) -> np.ndarray:
    """High-entropy colour texture in [0, 1]: white noise on ``cell``-pixel squares plus a coarse octave."""
    rng = np.random.default_rng(seed)
    n = -(-size // cell)
    fine = rng.random((n, n, 3))
    m = max(n // 8, 2)
    coarse = ndimage.zoom(rng.random((m, m, 3)), (n / m, n / m, 1), order=1, grid_mode=True, mode="nearest")
    tex = 0.6 * fine + 0.4 * coarse[:n, :n]
    tex = np.repeat(np.repeat(tex, cell, axis=0), cell, axis=1)[:size, :size]
    tex.setflags(write=False)
    return tex


def _background(scene: SceneSpec2D) -> np.ndarray:
    w, h = scene.canvas
    if scene.background_texture_seed is None:
        return np.broadcast_to(np.asarray(scene.background, dtype=np.float64), (h, w, 3)).copy()
    tex = noise_texture(scene.background_texture_seed, max(w, h), scene.texture_cell)
    return np.clip(np.asarray(scene.background) + TEXTURE_GAIN * (tex[:h, :w] - 0.5), 0.0, 1.0)


def _paint(frame: np.ndarray, shape: ShapeSpec, cell: int = 1) -> None:
    h, w = frame.shape[:2]
    half = shape.half_extent
    cx, cy = shape.center
    x0 = max(int(math.floor(cx - half)) - 2, 0)
    y0 = max(int(math.floor(cy - half)) - 2, 0)
    x1 = min(int(math.ceil(cx + half)) + 2, w)
    y1 = min(int(math.ceil(cy + half)) + 2, h)
    if x1 <= x0 or y1 <= y0:
        return
    alpha = coverage(shape.kind, shape.center, half, x0, y0, x1 - x0, y1 - y0)[..., None]
    region = frame[y0:y1, x0:x1]
    if shape.texture_seed is None:
        fill = np.asarray(shape.color)
    else:
        # texture is attached to the shape so it travels with it
        side = int(math.ceil(shape.size)) + 6
        tex = noise_texture(shape.texture_seed, side, cell)
        ix = np.clip(np.arange(x0, x1) - int(math.floor(cx - half)) + 2, 0, side - 1)
        iy = np.clip(np.arange(y0, y1) - int(math.floor(cy - half)) + 2, 0, side - 1)
        fill = np.clip(np.asarray(shape.color) + TEXTURE_GAIN * (tex[np.ix_(iy, ix)] - 0.5), 0.0, 1.0)
    region *= 1.0 - alpha
    region += alpha * fill


def render_sharp(scene: SceneSpec2D, t: float = 0.0) -> np.ndarray:
    """Rasterise the scene at time ``t`` (painter's order, 4x4 supersampling)."""
    state = advance(scene, t)
    frame = _background(state)
    for shape in state.shapes:
        _paint(frame, shape, state.texture_cell)
    return frame


def render_motion_blur(scene: SceneSpec2D, t: float, exposure: float, subframes: int = 32) -> np.ndarray:
    """Mean of ``subframes`` sharp renders at t, t+e/n, ..., t+(n-1)e/n."""
    if exposure < 0:
        raise DomainError(f"exposure must be non-negative, got {exposure}")
    if subframes < 1:
        raise DomainError(f"need at least one sub-frame, got {subframes}")
    if exposure == 0 or scene.is_static or subframes == 1:
        return render_sharp(scene, t)
    step = exposure / subframes
    acc = render_sharp(scene, t)
    for i in range(1, subframes):
        acc += render_sharp(scene, t + i * step)
    acc /= subframes
    return acc


def gradient_energy(frame: np.ndarray) -> float:
    """Sum of squared Sobel responses on luminance."""
    lum = luminance(frame)
    gx = ndimage.sobel(lum, axis=1, mode="nearest")
    gy = ndimage.sobel(lum, axis=0, mode="nearest")
    return float(np.sum(gx * gx + gy * gy))


def clip_timeline(n_frames: int, fps_out: float, fps_range: LogRange) -> list[float]:
    """Output timestamps; the first one leaves room for half the longest exposure."""
    t0 = 0.5 / fps_range.lo
    return [t0 + k / fps_out for k in range(n_frames)]


def render_shutter_clip(
    scene: SceneSpec2D,
    condition: SampledCondition | float,
    n_frames: int = 16,
    fps_range: LogRange = FPS_RANGE,
    fps_out: float = 8.0,
    subframes: int = 32,
    scene_id: Optional[str] = None,
) -> ClipSample:
    """Motion-blurred clip whose exposure follows the control scalar.

    Each exposure window is centred on its output timestamp, so the mean
    shape position per frame does not depend on ``c``.
    """
    if n_frames < 1:
        raise DomainError(f"n_frames must be >= 1, got {n_frames}")
    if not isinstance(condition, SampledCondition):
        condition = SampledCondition(0, 0, float(condition))
    exposure = map_exposure(condition.c, fps_range)
    lead = exposure * (subframes - 1) / (2 * subframes)
    stamps = clip_timeline(n_frames, fps_out, fps_range)
    frames = [render_motion_blur(scene, ts - lead, exposure, subframes) for ts in stamps]
    return ClipSample(
        frames=frames,
        condition=condition,
        physical_value=exposure,
        unit="s",
        scene_id=scene_id if scene_id is not None else f"scene{scene.seed}",
        effect="shutter",
        timestamps=stamps,
    )
