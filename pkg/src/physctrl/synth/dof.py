"""Layered thin-lens depth-of-field compositor.

Objects are flat silhouettes at discrete depths. Each layer is blurred with
a disk whose radius is the thin-lens circle of confusion for that depth and
then composited back to front.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import fftconvolve

from ..control_space import FSTOP_RANGE, LogRange, SampledCondition, map_log_centered
from ..errors import DomainError
from .raster import ClipSample, coverage
from .scenes import SceneSpec3D, SolidSpec

FOCAL_LENGTH = 0.050  # metres, 50 mm equivalent
REFERENCE_NEAR, REFERENCE_FAR = 1.0, 6.0  # geometry used to calibrate the pixel scale
REFERENCE_RADIUS = 8.0  # px of background blur at the widest stop on a 512 px canvas

_SILHOUETTE = {"cube": "square", "sphere": "circle", "cylinder": "square", "cone": "triangle", "pyramid": "triangle"}


def coc_radius(depth: float, focus_depth: float, fnumber: float, focal_length: float = FOCAL_LENGTH, kappa: float = 1.0) -> float:
    """Circle-of-confusion radius ``kappa * f^2/N * |d - d_f| / (d (d_f - f))``."""
    if depth <= focal_length or focus_depth <= focal_length:
        raise DomainError(f"depth {depth} m / focus {focus_depth} m must exceed focal length {focal_length} m")
    if fnumber <= 0:
        raise DomainError(f"f-number must be positive, got {fnumber}")
    if depth == focus_depth:
        return 0.0
    return kappa * (focal_length**2 / fnumber) * abs(depth - focus_depth) / (depth * (focus_depth - focal_length))


def calibrated_kappa(canvas_width: int, fstop_range: LogRange = FSTOP_RANGE, focal_length: float = FOCAL_LENGTH) -> float:
    """Pixel scale giving ~8 px background blur at the widest stop, scaled to the canvas."""
    unit = coc_radius(REFERENCE_FAR, REFERENCE_NEAR, fstop_range.lo, focal_length, 1.0)
    return REFERENCE_RADIUS / unit * (canvas_width / 512.0)


def disk_kernel(radius: float) -> np.ndarray:
    """Normalised disk with a one-pixel linear edge ramp."""
    if radius <= 0:
        return np.ones((1, 1))
    r = int(math.ceil(radius + 0.5))
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    k = np.clip(radius + 0.5 - np.hypot(xx, yy), 0.0, 1.0)
    return k / k.sum()


def _blur(img: np.ndarray, radius: float) -> np.ndarray:
    if radius <= 0:
        return img
    k = disk_kernel(radius)
    pad = k.shape[0] // 2
    if img.ndim == 2:
        padded = np.pad(img, pad, mode="edge")
        return fftconvolve(padded, k, mode="valid")
    padded = np.pad(img, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    return fftconvolve(padded, k[..., None], mode="valid")


def _shade(obj: SolidSpec, light: float | None, lx: np.ndarray, ly: np.ndarray) -> np.ndarray:
    """Per-pixel brightness factor; fixed for a scene regardless of aperture."""
    half = obj.size / 2
    u, v = lx / half, ly / half
    base = 1.0
    if obj.kind == "sphere":
        base = 1.0 - 0.25 * np.clip(u * u + v * v, 0, 1)
    elif obj.kind == "cube":
        base = np.where(v < -0.45, 1.15, 0.95)
    elif obj.kind == "cylinder":
        base = 1.0 - 0.3 * np.abs(u)
    elif obj.kind == "pyramid":
        base = np.where(u < 0, 1.05, 0.85)
    elif obj.kind == "cone":
        base = 1.0 - 0.2 * (u + 1) / 2
    if light is not None:
        base = base * (1.0 + 0.15 * (math.cos(light) * u - math.sin(light) * v))
    return np.broadcast_to(base, lx.shape)


def _object_layer(obj: SolidSpec, light, w: int, h: int) -> tuple[np.ndarray, np.ndarray]:
    """Premultiplied colour and alpha of one object on the full canvas."""
    rgb = np.zeros((h, w, 3))
    alpha = np.zeros((h, w))
    half = obj.size / 2
    cx, cy = obj.center
    x0, y0 = max(int(math.floor(cx - half)) - 2, 0), max(int(math.floor(cy - half)) - 2, 0)
    x1, y1 = min(int(math.ceil(cx + half)) + 2, w), min(int(math.ceil(cy + half)) + 2, h)
    if obj.kind == "cylinder":
        # upright rectangle, narrower than tall
        half_w = 0.35 * obj.size
        xs = np.arange(x0, x1) + 0.5 - cx
        ys = np.arange(y0, y1) + 0.5 - cy
        a = coverage("square", (cx, cy), half, x0, y0, x1 - x0, y1 - y0)
        a = a * np.clip(half_w + 0.5 - np.abs(xs)[None, :], 0.0, 1.0)
    else:
        a = coverage(_SILHOUETTE[obj.kind], (cx, cy), half, x0, y0, x1 - x0, y1 - y0)
        xs = np.arange(x0, x1) + 0.5 - cx
        ys = np.arange(y0, y1) + 0.5 - cy
    lx, ly = np.meshgrid(xs, ys)
    shade = _shade(obj, light, lx, ly)
    alpha[y0:y1, x0:x1] = a
    rgb[y0:y1, x0:x1] = (a * shade)[..., None] * np.asarray(obj.color)
    return rgb, alpha


def _wall(scene: SceneSpec3D) -> np.ndarray:
    """Back wall with soft stripes so defocus of the far plane is visible."""
    w, h = scene.canvas
    xs = np.arange(w) + 0.5
    stripes = 0.5 + 0.5 * np.sign(np.sin(2 * math.pi * xs / (w / 8.0)))
    shade = 0.85 + 0.15 * stripes
    ys = (np.arange(h) + 0.5) / h
    floor = np.where(ys > 0.6, 0.8, 1.0)
    return (floor[:, None] * shade[None, :])[..., None] * np.asarray(scene.wall_color)


def layer_radii(scene: SceneSpec3D, fnumber: float, kappa: float, focal_length: float = FOCAL_LENGTH) -> dict:
    radii = {"wall": coc_radius(scene.wall_depth, scene.focus_depth, fnumber, focal_length, kappa)}
    for i, obj in enumerate(scene.objects):
        radii[i] = coc_radius(obj.depth, scene.focus_depth, fnumber, focal_length, kappa)
    return radii


def render_dof(
    scene: SceneSpec3D,
    c: float,
    fstop_range: LogRange = FSTOP_RANGE,
    focal_length: float = FOCAL_LENGTH,
    kappa: float | None = None,
) -> np.ndarray:
    fnumber = map_log_centered(c, fstop_range)
    w, h = scene.canvas
    if kappa is None:
        kappa = calibrated_kappa(w, fstop_range, focal_length)
    radii = layer_radii(scene, fnumber, kappa, focal_length)
    out = _blur(_wall(scene), radii["wall"])
    order = sorted(range(len(scene.objects)), key=lambda i: -scene.objects[i].depth)
    for i in order:
        rgb, alpha = _object_layer(scene.objects[i], scene.light_azimuth, w, h)
        r = radii[i]
        rgb, alpha = _blur(rgb, r), _blur(alpha, r)
        out = out * (1.0 - alpha[..., None]) + rgb
    return out


def focus_mask(scene: SceneSpec3D, threshold: float = 1.0) -> np.ndarray:
    """Pixels the in-focus object covers with at least ``threshold`` coverage."""
    w, h = scene.canvas
    _, alpha = _object_layer(scene.focus_object, scene.light_azimuth, w, h)
    return alpha >= threshold


def render_aperture_sample(scene: SceneSpec3D, condition: SampledCondition | float, fstop_range: LogRange = FSTOP_RANGE, scene_id=None) -> ClipSample:
    if not isinstance(condition, SampledCondition):
        condition = SampledCondition(0, 0, float(condition))
    frame = render_dof(scene, condition.c, fstop_range)
    return ClipSample(
        frames=[frame],
        condition=condition,
        physical_value=map_log_centered(condition.c, fstop_range),
        unit="f-number",
        scene_id=scene_id if scene_id is not None else f"scene{scene.seed}",
        effect="aperture",
    )
