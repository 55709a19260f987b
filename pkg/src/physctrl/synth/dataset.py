"""Dataset forging: pyramid plan x randomized scenes -> PNG sequences + manifest."""

from __future__ import annotations

import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .. import __version__
from ..control_space import (
    FPS_RANGE,
    FSTOP_RANGE,
    KELVIN_RANGE,
    KelvinRange,
    LogRange,
    PyramidPlan,
    SampledCondition,
    pyramid_sample,
)
from ..errors import ArtifactIOError, ConfigError
from .color import render_temperature_sample
from .dof import render_aperture_sample
from .raster import ClipSample, render_shutter_clip
from .scenes import SceneParams2D, SceneParams3D, derive_seed, random_scene_2d, random_scene_3d

log = logging.getLogger(__name__)

EFFECTS = ("shutter", "aperture", "temperature")
STYLES = ("primitives", "noise")
_EFFECT_KEY = {"shutter": 1, "aperture": 2, "temperature": 3}


@dataclass(frozen=True)
class ForgeOptions:
    canvas: tuple[int, int] = (512, 512)
    n_frames: int = 16
    fps_out: float = 8.0
    subframes: int = 32
    style: str = "primitives"
    fps_range: LogRange = FPS_RANGE
    fstop_range: LogRange = FSTOP_RANGE
    kelvin_range: KelvinRange = KELVIN_RANGE
    preserve_luma: bool = True
    warm_at_negative: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.style not in STYLES:
            raise ConfigError(f"unknown scene style {self.style!r}; expected one of {STYLES}")
        if self.n_frames < 1 or self.subframes < 1:
            raise ConfigError("n_frames and subframes must be >= 1")

    def scene_params_2d(self, effect: str) -> SceneParams2D:
        base = SceneParams2D(textured=self.style == "noise")
        if effect == "temperature":
            base = replace(base, n_shapes=(2, 4), speed=(0.0, 0.0))
        return base.scaled(self.canvas)


@dataclass
class DatasetManifest:
    effect: str
    plan: PyramidPlan
    scenes: list = field(default_factory=list)
    entries: list = field(default_factory=list)
    generator_version: str = __version__
    style: str = "primitives"

    def to_dict(self) -> dict:
        return {
            "effect": self.effect,
            "generator_version": self.generator_version,
            "style": self.style,
            "plan": {"layer_counts": list(self.plan.layer_counts), "seed": self.plan.rng_seed},
            "scenes": self.scenes,
            "entries": self.entries,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def write(self, path) -> None:
        path = Path(path)
        try:
            path.write_text(self.to_json())
        except OSError as exc:
            raise ArtifactIOError(f"cannot write manifest ({exc.strerror})", path) from exc

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ArtifactIOError(f"cannot read manifest ({exc.strerror})", path) from exc
        plan = PyramidPlan(tuple(data["plan"]["layer_counts"]), data["plan"]["seed"])
        return cls(data["effect"], plan, data["scenes"], data["entries"], data["generator_version"], data.get("style", "primitives"))


def save_png(frame: np.ndarray, path) -> None:
    data = np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
    try:
        Image.fromarray(data, mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write frame ({exc})", path) from exc


def load_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as exc:
        raise ArtifactIOError(f"cannot read frame ({exc})", path) from exc


def scene_seed(plan: PyramidPlan, effect: str, layer: int, index: int) -> int:
    return derive_seed(plan.rng_seed, _EFFECT_KEY[effect], layer, index)


def render_entry(effect: str, seed: int, condition: SampledCondition, options: ForgeOptions, scene_id: str) -> ClipSample:
    """Render one (scene, condition) sample; scenes are rebuilt from their seed."""
    if effect == "shutter":
        scene = random_scene_2d(seed, options.scene_params_2d(effect))
        return render_shutter_clip(
            scene, condition, options.n_frames, options.fps_range, options.fps_out, options.subframes, scene_id
        )
    if effect == "temperature":
        scene = random_scene_2d(seed, options.scene_params_2d(effect))
        return render_temperature_sample(
            scene, condition, options.kelvin_range, options.preserve_luma, options.warm_at_negative, scene_id
        )
    if effect == "aperture":
        scene = random_scene_3d(seed, SceneParams3D(canvas=options.canvas))
        return render_aperture_sample(scene, condition, options.fstop_range, scene_id)
    raise ConfigError(f"unknown effect {effect!r}; expected one of {EFFECTS}")


def _render_and_write(task) -> dict:
    effect, layer, seed, condition, options, scene_id, out_dir = task
    clip = render_entry(effect, seed, condition, options, scene_id)
    rel_dir = Path(scene_id) / f"bin{condition.bin_index:02d}"
    target = Path(out_dir) / rel_dir
    try:
        target.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactIOError(f"cannot create entry directory ({exc.strerror})", target) from exc
    paths = []
    for i, frame in enumerate(clip.frames):
        name = f"frame_{i:04d}.png"
        save_png(frame, target / name)
        paths.append(str(rel_dir / name))
    return {
        "scene_id": scene_id,
        "layer": layer,
        "bin": condition.bin_index,
        "c": condition.c,
        "physical_value": clip.physical_value,
        "unit": clip.unit,
        "paths": paths,
        "n_frames": len(clip.frames),
        "seed": seed,
    }


def plan_tasks(effect: str, plan: PyramidPlan, scenes_per_layer: int, options: ForgeOptions, out_dir) -> tuple[list, list]:
    conditions = pyramid_sample(plan)
    by_layer: dict[int, list[SampledCondition]] = {}
    for s in conditions:
        by_layer.setdefault(s.layer_index, []).append(s)
    scenes, tasks = [], []
    for layer in range(len(plan.layer_counts)):
        for j in range(scenes_per_layer):
            seed = scene_seed(plan, effect, layer, j)
            scene_id = f"L{layer}S{j}"
            scenes.append({"scene_id": scene_id, "layer": layer, "seed": seed})
            for cond in by_layer[layer]:
                tasks.append((effect, layer, seed, cond, options, scene_id, str(out_dir)))
    return scenes, tasks


def build_dataset(effect: str, plan: PyramidPlan, scenes_per_layer: int = 6, out_dir=".", options: Optional[ForgeOptions] = None, manifest_name: str = "dataset-manifest.json") -> DatasetManifest:
    """Render every layer's scenes at all of that layer's conditions and write a manifest."""
    if effect not in EFFECTS:
        raise ConfigError(f"unknown effect {effect!r}; expected one of {EFFECTS}")
    if scenes_per_layer < 1:
        raise ConfigError(f"scenes_per_layer must be >= 1, got {scenes_per_layer}")
    options = options or ForgeOptions()
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactIOError(f"cannot create output directory ({exc.strerror})", out_dir) from exc
    if not os.access(out_dir, os.W_OK):
        raise ArtifactIOError("output directory is not writable", out_dir)
    scenes, tasks = plan_tasks(effect, plan, scenes_per_layer, options, out_dir)
    log.info("forging %d %s samples into %s", len(tasks), effect, out_dir)
    if options.workers > 1:
        with ProcessPoolExecutor(options.workers) as pool:
            entries = list(pool.map(_render_and_write, tasks))
    else:
        entries = [_render_and_write(t) for t in tasks]
    manifest = DatasetManifest(effect, plan, scenes, entries, style=options.style)
    if manifest_name:
        manifest.write(out_dir / manifest_name)
    return manifest


def expected_entry_count(plan: PyramidPlan, scenes_per_layer: int) -> int:
    return sum(scenes_per_layer * n for n in plan.layer_counts)


def exhaustive_combinations(plan: PyramidPlan, scenes_per_layer: int):
    """Every (scene, scalar value) pairing a non-pyramid design would render.

    Each of the layers x scenes_per_layer scenes is paired with every one of
    the pyramid's per-sample scalar values.
    """
    n_scenes = len(plan.layer_counts) * scenes_per_layer
    n_values = expected_entry_count(plan, scenes_per_layer)
    return itertools.product(range(n_scenes), range(n_values))


def load_clip_frames(manifest_dir, entry: dict) -> list[np.ndarray]:
    return [load_png(Path(manifest_dir) / p) for p in entry["paths"]]


def options_to_dict(options: ForgeOptions) -> dict:
    return asdict(options)
