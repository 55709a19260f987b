"""Global colour-temperature shifts and frame accumulation on arbitrary footage."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..control_space import KELVIN_RANGE, KelvinRange, SampledCondition, kelvin_to_rgb_gains, map_kelvin
from ..errors import DomainError
from .raster import REC709, ClipSample, render_sharp
from .scenes import SceneSpec2D


def apply_white_balance(frame: np.ndarray, k: float, kr: KelvinRange = KELVIN_RANGE, preserve_luma: bool = False) -> np.ndarray:
    """Tint ``frame`` from the reference white point towards ``k`` kelvin.

    With ``preserve_luma`` the tinted frame is rescaled so its mean Rec.709
    luminance matches the input. Clamping to [0, 1] happens last.
    """
    frame = np.asarray(frame, dtype=np.float64)
    gains = np.asarray(kelvin_to_rgb_gains(k, kr.k_ref))
    out = frame * gains
    if preserve_luma:
        before = float(np.mean(frame @ REC709))
        after = float(np.mean(out @ REC709))
        if after > 0:
            out *= before / after
    return np.clip(out, 0.0, 1.0)


def accumulate_frames(frames: Sequence[np.ndarray], window: int) -> list[np.ndarray]:
    """Average consecutive non-overlapping groups of ``window`` frames.

    Emulates a longer shutter on high-frame-rate footage. A trailing group
    shorter than ``window`` is dropped.
    """
    if len(frames) == 0:
        raise DomainError("no frames to accumulate")
    if window < 1 or window > len(frames):
        raise DomainError(f"window {window} must lie in [1, {len(frames)}]")
    stack = [np.asarray(f, dtype=np.float64) for f in frames]
    if window == 1:
        return [f.copy() for f in stack]
    out = []
    for start in range(0, len(stack) - window + 1, window):
        acc = stack[start].copy()
        for f in stack[start + 1 : start + window]:
            acc += f
        out.append(acc / window)
    return out


def render_temperature_sample(
    scene: SceneSpec2D,
    condition: SampledCondition | float,
    kr: KelvinRange = KELVIN_RANGE,
    preserve_luma: bool = True,
    warm_at_negative: bool = True,
    scene_id=None,
) -> ClipSample:
    if not isinstance(condition, SampledCondition):
        condition = SampledCondition(0, 0, float(condition))
    kelvin = map_kelvin(condition.c, kr, warm_at_negative)
    reference = render_sharp(scene, 0.0)
    return ClipSample(
        frames=[apply_white_balance(reference, kelvin, kr, preserve_luma)],
        condition=condition,
        physical_value=kelvin,
        unit="K",
        scene_id=scene_id if scene_id is not None else f"scene{scene.seed}",
        effect="temperature",
    )
