"""Command-line entry point: forge, train, surgery, fep, spectra, svp-ingest.

Settings resolve as built-in defaults <- ``--config`` JSON <- command-line
flags. Exit codes: 0 ok, 1 usage/config, 2 I/O, 3 numerical.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import shutil
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .errors import ArtifactIOError, ConfigError, PhysCtrlError

log = logging.getLogger("physctrl")

DEFAULTS = {
    "seed": 0,
    "forge": {
        "effect": "shutter",
        "layer_counts": [9, 7, 5, 3, 1],
        "scenes_per_layer": 6,
        "canvas": [512, 512],
        "style": "primitives",
        "n_frames": 16,
        "fps_out": 8.0,
        "subframes": 32,
        "workers": 1,
        "preserve_luma": True,
        "warm_at_negative": True,
        "fps_range": [4.0, 256.0],
        "fstop_range": [1.2, 16.0],
        "kelvin_range": [2000.0, 12000.0, 6500.0],
    },
    "model": {},
    "optim": {},
    "train": {"steps": 0, "cadence": 50, "checkpoint_every": None, "batch_size": 4, "baseline_seeds": [0, 1]},
    "fep": {"n_frames": 4, "denoise_steps": 1, "c": 0.0, "mode": "joint", "prompts": None},
    "spectra": {"k": 64, "eps": 0.5, "tau": 0.1, "c_strong": 1.0, "targets": ["v"], "block": None, "n": 64, "weighting": "rms"},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ArtifactIOError(f"cannot read config ({exc.strerror})", path) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    unknown = set(data) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return _deep_merge(DEFAULTS, data)


def _set(cfg: dict, section: str, key: str, value) -> None:
    if value is not None:
        cfg[section][key] = value


# subcommands ---------------------------------------------------------------------


def cmd_forge(cfg: dict, args) -> int:
    from .control_space import KelvinRange, LogRange, PyramidPlan
    from .synth.dataset import ForgeOptions, build_dataset

    f = cfg["forge"]
    _set(cfg, "forge", "effect", args.effect)
    _set(cfg, "forge", "style", args.style)
    _set(cfg, "forge", "scenes_per_layer", args.scenes_per_layer)
    _set(cfg, "forge", "workers", args.workers)
    if args.canvas is not None:
        f["canvas"] = [args.canvas, args.canvas]
    if args.one_shot:
        f["layer_counts"], f["scenes_per_layer"] = [7], 1
    plan = PyramidPlan(tuple(f["layer_counts"]), cfg["seed"])
    lo, hi, ref = f["kelvin_range"]
    options = ForgeOptions(
        canvas=tuple(f["canvas"]),
        n_frames=f["n_frames"],
        fps_out=f["fps_out"],
        subframes=f["subframes"],
        style=f["style"],
        fps_range=LogRange(*f["fps_range"]),
        fstop_range=LogRange(*f["fstop_range"]),
        kelvin_range=KelvinRange(lo, hi, ref),
        preserve_luma=f["preserve_luma"],
        warm_at_negative=f["warm_at_negative"],
        workers=f["workers"],
    )
    out = Path(args.out)
    manifest = build_dataset(f["effect"], plan, f["scenes_per_layer"], out, options)
    _write_snapshot(out / "forge.snapshot", cfg)
    print(f"forged {len(manifest.entries)} {f['effect']} samples -> {out / 'dataset-manifest.json'}")
    return 0


def _model_optim(cfg: dict):
    from .adapter_net import ModelConfig, OptimConfig

    return ModelConfig.from_dict(cfg["model"]), OptimConfig.from_dict(cfg["optim"])


def _probe(cfg: dict, seed: int):
    from .drift_probe import ProbeConfig

    p = cfg["fep"]
    return ProbeConfig(seed, p["n_frames"], p["denoise_steps"], p["c"], p["mode"])


def _prompts(cfg: dict):
    from .drift_probe import default_prompts, read_prompts

    path = cfg["fep"].get("prompts")
    return read_prompts(path) if path else default_prompts()


def _write_snapshot(path: Path, cfg: dict) -> None:
    try:
        path.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write config snapshot ({exc.strerror})", path) from exc


def cmd_train(cfg: dict, args) -> int:
    from .drift_probe import read_report
    from .pipeline import TrainSettings, run_training
    from .plotting import plot_drift

    _set(cfg, "fep", "prompts", args.prompts)
    _set(cfg, "train", "steps", args.steps)
    _set(cfg, "train", "cadence", args.cadence)
    _set(cfg, "train", "batch_size", args.batch_size)
    _set(cfg, "optim", "lr", args.lr)
    _set(cfg, "optim", "warmup", args.warmup)
    if args.adapter_only:
        cfg["optim"]["train_lora"] = False
    model, optim = _model_optim(cfg)
    t = cfg["train"]
    settings = TrainSettings(t["steps"], t["cadence"], t["checkpoint_every"], t["batch_size"], cfg["seed"], tuple(t["baseline_seeds"]))
    run_dir = Path(args.out)
    data = Path(args.data) if args.data else run_dir / "dataset-manifest.json"
    if data.is_dir():
        data = data / "dataset-manifest.json"
    if not data.exists():
        raise ArtifactIOError("dataset manifest not found", data)
    snapshot = copy.deepcopy(cfg)
    snapshot["model"], snapshot["optim"] = model.to_dict(), optim.to_dict()
    snapshot["data"] = str(data)
    result = run_training(run_dir, data, model, optim, settings, _probe(cfg, cfg["seed"]), _prompts(cfg), snapshot)
    plot_drift(read_report(run_dir / "fep.csv"), run_dir / "fep.png")
    last = result.losses[-1] if result.losses else float("nan")
    print(f"trained {settings.steps} steps (final loss {last:.4f}); {len(result.series)} drift rows -> {run_dir / 'fep.csv'}")
    return 0


def cmd_surgery(cfg: dict, args) -> int:
    from .adapter_net import Checkpoint, block_summary, surgery_prune

    src, dst = Path(args.checkpoint_in), Path(args.checkpoint_out)
    if src.exists() and dst.exists() and src.resolve() == dst.resolve():
        raise ConfigError("refusing to overwrite the input checkpoint; choose another output path")
    if args.mode == "dirty":
        ckpt = Checkpoint.load(src)  # validates before copying
        try:
            shutil.copyfile(src, dst)
        except OSError as exc:
            raise ArtifactIOError(f"cannot write checkpoint ({exc.strerror})", dst) from exc
    else:
        ckpt = surgery_prune(Checkpoint.load(src))
        ckpt.save(dst)
    if not args.quiet:
        for row in block_summary(ckpt):
            state = "retained" if row["retained"] or args.mode == "dirty" else "discarded"
            print(f"block {row['block']:3d}  LoRA {state:9s}  |dW| {row['lora_norm']:.4g}{'  +adapter' if row['adapter'] else ''}")
    print(f"{args.mode} surgery -> {dst}")
    return 0


def cmd_fep(cfg: dict, args) -> int:
    from .adapter_net import Checkpoint
    from .drift_probe import default_provider, probe_embeddings, ssf_score, ssfd_score

    _set(cfg, "fep", "prompts", args.prompts)
    a = Checkpoint.load(args.checkpoint_a)
    b = Checkpoint.load(args.checkpoint_b)
    seed_a = cfg["seed"]
    seed_b = args.seed_b if args.seed_b is not None else seed_a
    prompts, provider = _prompts(cfg), default_provider()
    ea = probe_embeddings(a, prompts, provider, _probe(cfg, seed_a), pristine=args.pristine_a)
    eb = probe_embeddings(b, prompts, provider, _probe(cfg, seed_b), pristine=args.pristine_b)
    row = {"checkpoint_a": args.checkpoint_a, "checkpoint_b": args.checkpoint_b, "seed_a": seed_a, "seed_b": seed_b,
           "ssf": repr(ssf_score(ea, eb)), "ssfd": repr(ssfd_score(ea, eb))}
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
    w.writeheader()
    w.writerow(row)
    text = buf.getvalue()
    if args.report:
        try:
            Path(args.report).write_text(text)
        except OSError as exc:
            raise ArtifactIOError(f"cannot write report ({exc.strerror})", args.report) from exc
    sys.stdout.write(text)
    return 0


def cmd_spectra(cfg: dict, args) -> int:
    from .adapter_net import Checkpoint
    from .pipeline import SpectraSettings, run_spectra

    s = cfg["spectra"]
    for key in ("k", "eps", "tau", "c_strong", "block", "n", "weighting"):
        _set(cfg, "spectra", key, getattr(args, key))
    if args.targets:
        s["targets"] = list(args.targets)
    pre, post = Checkpoint.load(args.checkpoint_pre), Checkpoint.load(args.checkpoint_post)
    settings = SpectraSettings(s["k"], s["eps"], s["tau"], s["c_strong"], tuple(s["targets"]), s["block"], s["n"], s["weighting"])
    out = Path(args.out) / "spectra"
    summary = run_spectra(pre, post, out, settings, figures=not args.no_figures)
    line = f"total intruders {summary['total_intruders']} (k={settings.k}, eps={settings.eps})"
    if "R_text" in summary:
        line += f"; R_text {summary['R_text']:g}, R_cond {summary['R_cond']:g}"
    print(f"{line} -> {out}")
    return 0


def cmd_svp_ingest(cfg: dict, args) -> int:
    from .drift_probe import svp_ingest

    table = svp_ingest(args.scores)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "svp-table.csv")
    for w in table.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if table.unknown_metrics:
        print(f"unrecognised metrics (kept): {', '.join(table.unknown_metrics)}", file=sys.stderr)
    sys.stdout.write(table.to_markdown())
    return 0


# parser ----------------------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="overrides the config seed")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output / run directory (default runs/default)")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="physctrl", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("forge", parents=[common], help="render a pyramid-sampled synthetic dataset")
    p.add_argument("--effect", choices=("shutter", "aperture", "temperature"))
    p.add_argument("--style", choices=("primitives", "noise"))
    p.add_argument("--one-shot", action="store_true", help="single scene, 7 scalar conditions")
    p.add_argument("--scenes-per-layer", type=int)
    p.add_argument("--canvas", type=int, help="square canvas side in pixels")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_forge)

    p = sub.add_parser("train", parents=[common], help="train LoRA + adapter with drift probes")
    p.add_argument("--data", help="dataset manifest or directory (default <out>/dataset-manifest.json)")
    p.add_argument("--steps", type=int)
    p.add_argument("--cadence", type=int, help="steps between drift probes")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--warmup", type=int)
    p.add_argument("--adapter-only", action="store_true", help="freeze the backbone LoRA")
    p.add_argument("--prompts", help="probe prompt file, one per line")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("surgery", parents=[common], help="clean (prune shallow LoRA) or dirty (copy)")
    p.add_argument("checkpoint_in")
    p.add_argument("checkpoint_out")
    p.add_argument("--mode", choices=("clean", "dirty"), default="clean")
    p.set_defaults(func=cmd_surgery)

    p = sub.add_parser("fep", parents=[common], help="compare two checkpoints with single-step probes")
    p.add_argument("checkpoint_a")
    p.add_argument("checkpoint_b")
    p.add_argument("--seed-b", type=int, help="latent seed for b (default: same as a)")
    p.add_argument("--pristine-a", action="store_true", help="run a as its frozen backbone")
    p.add_argument("--pristine-b", action="store_true")
    p.add_argument("--prompts", help="probe prompt file, one per line")
    p.add_argument("--report", help="also write the metrics row to this CSV")
    p.set_defaults(func=cmd_fep)

    p = sub.add_parser("spectra", parents=[common], help="intruder sweep and principal-component showdown")
    p.add_argument("checkpoint_pre")
    p.add_argument("checkpoint_post")
    p.add_argument("--k", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--c-strong", type=float)
    p.add_argument("--targets", nargs="+", choices=("q", "k", "v", "o"))
    p.add_argument("--block", type=int, help="adapter block for the showdown (default: shallowest)")
    p.add_argument("--n", type=int, help="principal components probed")
    p.add_argument("--weighting", choices=("rms", "unit"))
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_spectra)

    p = sub.add_parser("svp-ingest", parents=[common], help="pivot externally computed SVP scores")
    p.add_argument("scores", help="CSV with columns metric,variant,value")
    p.set_defaults(func=cmd_svp_ingest)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("out", "runs/default"), ("quiet", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        return args.func(cfg, args)
    except PhysCtrlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (TypeError, KeyError) as exc:
        # malformed config values surface here
        print(f"error: bad configuration ({exc})", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
