"""Run-directory workflows shared by the CLI and scripted experiments.

A run directory looks like::

    <run>/config.snapshot          resolved JSON config
    <run>/dataset-manifest.json    copy of the training manifest
    <run>/checkpoints/step_NNNNNN.ckpt
    <run>/fep.csv                  drift report
    <run>/fep-baseline.json        cached self-baseline
    <run>/spectra/                 heatmap / spectrum / summary
"""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from filelock import FileLock, Timeout

from .adapter_net import Checkpoint, LatentCodec, ModelConfig, OptimConfig, Trainer, load_training_set, sample_batch, surgery_prune
from .drift_probe import (
    DriftSeries,
    ProbeConfig,
    default_prompts,
    default_provider,
    fep_baseline,
    probe_embeddings,
    ssf_score,
    ssfd_score,
    write_report,
)
from .errors import ArtifactIOError, ConfigError, TrainingError
from .spectra import depth_sweep, showdown_checkpoint, summary_dict, write_heatmap_csv, write_spectrum_csv, write_summary

log = logging.getLogger(__name__)


@dataclass
class TrainSettings:
    steps: int = 0
    cadence: int = 50
    checkpoint_every: Optional[int] = None  # None -> same as cadence
    batch_size: int = 4
    seed: int = 0
    baseline_seeds: tuple = (0, 1)

    def __post_init__(self):
        if self.steps < 0 or self.cadence < 1 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0; cadence and batch_size must be >= 1")
        if len(self.baseline_seeds) < 2:
            raise ConfigError("baseline_seeds needs at least two seeds")


@dataclass
class TrainResult:
    run_dir: Path
    losses: list
    series: DriftSeries
    baseline: dict
    checkpoints: list = field(default_factory=list)
    final: Optional[Checkpoint] = None


def checkpoint_path(run_dir, step: int) -> Path:
    return Path(run_dir) / "checkpoints" / f"step_{step:06d}.ckpt"


def write_json(path, data) -> None:
    try:
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {Path(path).name} ({exc.strerror})", path) from exc


def _load_or_make_baseline(run_dir: Path, pristine: Checkpoint, prompts, seeds, provider, probe) -> dict:
    path = run_dir / "fep-baseline.json"
    key = {"seeds": [int(s) for s in seeds], "provider": provider.name, "n_prompts": len(prompts), "probe": asdict(probe)}
    if path.exists():
        cached = json.loads(path.read_text())
        if cached.get("key") == key:
            return cached["baseline"]
    base = fep_baseline(pristine, prompts, seeds, provider, probe)
    write_json(path, {"key": key, "baseline": base})
    return base


def run_training(
    run_dir,
    manifest_path,
    model: ModelConfig = ModelConfig(),
    optim: OptimConfig = OptimConfig(),
    settings: TrainSettings = TrainSettings(),
    probe: ProbeConfig = ProbeConfig(),
    prompts: Optional[Sequence[str]] = None,
    snapshot: Optional[dict] = None,
) -> TrainResult:
    """Train under an exclusive lock on the run directory, probing drift every ``cadence`` steps."""
    run_dir = Path(run_dir)
    manifest_path = Path(manifest_path)
    try:
        (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactIOError(f"cannot create run directory ({exc.strerror})", run_dir) from exc
    lock = FileLock(str(run_dir / ".train.lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout as exc:
        raise ArtifactIOError("another training process holds the run lock", run_dir) from exc
    try:
        return _train_locked(run_dir, manifest_path, model, optim, settings, probe, prompts, snapshot)
    finally:
        lock.release()


def _train_locked(run_dir, manifest_path, model, optim, settings, probe, prompts, snapshot) -> TrainResult:
    prompts = list(prompts) if prompts is not None else default_prompts()
    provider = default_provider()
    if snapshot is not None:
        write_json(run_dir / "config.snapshot", snapshot)
    if manifest_path.resolve() != (run_dir / "dataset-manifest.json").resolve():
        try:
            shutil.copyfile(manifest_path, run_dir / "dataset-manifest.json")
        except OSError as exc:
            raise ArtifactIOError(f"cannot copy manifest ({exc.strerror})", manifest_path) from exc
    codec = LatentCodec(model.model_dim)
    data = load_training_set(manifest_path, codec, model.n_text_tokens, model.text_dim)
    ckpt = Checkpoint.fresh(model)
    pristine = Checkpoint.fresh(model)
    trainer = Trainer(ckpt, optim)
    every = settings.checkpoint_every or settings.cadence
    saved = [checkpoint_path(run_dir, 0)]
    ckpt.save(saved[0])
    series = DriftSeries()
    baseline = {"ssf_base": 1.0, "ssfd_base": 0.0}
    reference = None
    if settings.steps > 0:
        baseline = _load_or_make_baseline(run_dir, pristine, prompts, settings.baseline_seeds, provider, probe)
        reference = probe_embeddings(pristine, prompts, provider, probe, pristine=True)
    write_report(run_dir / "fep.csv", series, baseline)
    losses = []
    for step in range(settings.steps):
        try:
            losses.append(trainer.step(sample_batch(data, settings.batch_size, settings.seed, step)))
        except TrainingError:
            log.error("training diverged; last good checkpoint is %s", saved[-1])
            raise
        done = step + 1
        if done % settings.cadence == 0:
            emb = probe_embeddings(ckpt, prompts, provider, probe)
            series.append(done, ssf_score(reference, emb), ssfd_score(reference, emb))
            write_report(run_dir / "fep.csv", series, baseline)
            p = series.points[-1]
            log.info("step %d loss %.4f ssf %.4f ssfd %.4f", done, losses[-1], p.ssf, p.ssfd)
        if done % every == 0 or done == settings.steps:
            trainer.export_state()
            saved.append(checkpoint_path(run_dir, done))
            ckpt.save(saved[-1])
    return TrainResult(run_dir, losses, series, baseline, saved, ckpt)


@dataclass
class SpectraSettings:
    k: int = 64
    eps: float = 0.5
    tau: float = 0.1
    c_strong: float = 1.0
    targets: tuple = ("v",)
    block: Optional[int] = None
    n: int = 64
    weighting: str = "rms"


def run_spectra(pre: Checkpoint, post: Checkpoint, out_dir, settings: SpectraSettings = SpectraSettings(), figures: bool = True) -> dict:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactIOError(f"cannot create spectra directory ({exc.strerror})", out_dir) from exc
    sweep = depth_sweep(pre, post, settings.targets, settings.k, settings.eps)
    report = None
    skipped = None
    if not post.config.adapter_set:
        skipped = "no adapter blocks"
    elif post.config.text_dim != post.config.model_dim:
        skipped = f"text_dim {post.config.text_dim} != model_dim {post.config.model_dim}"
    else:
        report = showdown_checkpoint(post, settings.block, settings.c_strong, settings.n, settings.tau, settings.weighting)
        write_spectrum_csv(out_dir / "spectrum.csv", report)
    write_heatmap_csv(out_dir / "heatmap.csv", sweep)
    summary = summary_dict(sweep, report, settings.k, settings.eps)
    if skipped:
        summary["showdown_skipped"] = skipped
    write_summary(out_dir / "summary.json", summary)
    if figures:
        from .plotting import plot_heatmap, plot_spectrum

        for t in sweep.targets:
            plot_heatmap(sweep, t, out_dir / f"heatmap-{t}.png", settings.eps)
        if report is not None:
            plot_spectrum(report, out_dir / "spectrum.png")
    return summary


def clean_surgery(path_in, path_out) -> Checkpoint:
    ckpt = Checkpoint.load(path_in)
    out = surgery_prune(ckpt)
    out.save(path_out)
    return out
