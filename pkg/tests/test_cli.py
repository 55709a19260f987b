import csv
import hashlib
import json
from pathlib import Path

import pytest
from filelock import FileLock

from physctrl.adapter_net import Checkpoint, ModelConfig
from physctrl.cli import DEFAULTS, main

TINY_MODEL = {"n_blocks": 3, "model_dim": 32, "n_heads": 4, "text_dim": 32, "adapter_dim": 16, "lora_rank": 4, "n_text_tokens": 4}
FAST_FORGE = {"canvas": [64, 64], "n_frames": 2, "subframes": 4}


def _config(tmp_path, **sections):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"forge": FAST_FORGE, "model": TINY_MODEL, **sections}))
    return str(path)


def _digest(paths):
    return {str(p): hashlib.sha256(Path(p).read_bytes()).hexdigest() for p in paths}


@pytest.fixture(scope="module")
def forged(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = _config(root)
    assert main(["--config", cfg, "--out", str(root / "data"), "--quiet", "forge", "--one-shot"]) == 0
    return root, cfg


@pytest.fixture(scope="module")
def trained(forged):
    root, cfg = forged
    prompts = root / "prompts.txt"
    prompts.write_text("\n".join(f"prompt {i}" for i in range(6)) + "\n")
    run = root / "run"
    rc = main(["--config", cfg, "--out", str(run), "--quiet", "train", "--data", str(root / "data"), "--steps", "8", "--cadence", "4", "--lr", "5e-3", "--warmup", "2", "--prompts", str(prompts)])
    assert rc == 0
    return root, cfg, run, prompts


def test_one_shot_manifest(forged, tmp_path):
    root, cfg = forged
    m = json.loads((root / "data" / "dataset-manifest.json").read_text())
    assert len(m["entries"]) == 7
    assert main(["--config", cfg, "--out", str(tmp_path / "again"), "--quiet", "forge", "--one-shot"]) == 0
    assert (tmp_path / "again" / "dataset-manifest.json").read_bytes() == (root / "data" / "dataset-manifest.json").read_bytes()


def test_default_plan_manifest(tmp_path):
    cfg = _config(tmp_path)
    assert main(["--config", cfg, "--out", str(tmp_path / "d"), "--quiet", "forge", "--effect", "temperature"]) == 0
    assert len(json.loads((tmp_path / "d" / "dataset-manifest.json").read_text())["entries"]) == 150


def test_seed_flag_changes_plan(forged, tmp_path):
    root, cfg = forged
    main(["--config", cfg, "--seed", "5", "--out", str(tmp_path / "s5"), "--quiet", "forge", "--one-shot"])
    a = json.loads((tmp_path / "s5" / "dataset-manifest.json").read_text())
    b = json.loads((root / "data" / "dataset-manifest.json").read_text())
    assert [e["c"] for e in a["entries"]] != [e["c"] for e in b["entries"]]
    snap = json.loads((tmp_path / "s5" / "forge.snapshot").read_text())
    assert snap["seed"] == 5


def test_train_zero_steps(forged, tmp_path):
    root, cfg = forged
    run = tmp_path / "zero"
    assert main(["--config", cfg, "--out", str(run), "--quiet", "train", "--data", str(root / "data")]) == 0
    assert sorted(p.name for p in (run / "checkpoints").iterdir()) == ["step_000000.ckpt"]
    assert (run / "fep.csv").read_text() == "step,ssf,ssfd,ssf_base,ssfd_base,v_drift_cumulative\n"
    assert {"config.snapshot", "dataset-manifest.json", "fep.png"} <= {p.name for p in run.iterdir()}


def test_train_outputs(trained):
    root, cfg, run, _ = trained
    rows = list(csv.DictReader(open(run / "fep.csv")))
    assert [int(r["step"]) for r in rows] == [4, 8]
    assert float(rows[0]["ssf"]) < 1.0
    assert sorted(p.name for p in (run / "checkpoints").iterdir()) == ["step_000000.ckpt", "step_000004.ckpt", "step_000008.ckpt"]
    assert Checkpoint.load(run / "checkpoints" / "step_000008.ckpt").step == 8
    snap = json.loads((run / "config.snapshot").read_text())
    assert snap["optim"]["lr"] == 5e-3 and snap["model"]["n_blocks"] == 3
    assert json.loads((run / "fep-baseline.json").read_text())["baseline"]["ssf_base"] < 1.0


def test_train_is_deterministic(trained, tmp_path):
    root, cfg, run, prompts = trained
    other = tmp_path / "run2"
    main(["--config", cfg, "--out", str(other), "--quiet", "train", "--data", str(root / "data"), "--steps", "8", "--cadence", "4", "--lr", "5e-3", "--warmup", "2", "--prompts", str(prompts)])
    for rel in ("fep.csv", "checkpoints/step_000008.ckpt", "fep-baseline.json"):
        assert (run / rel).read_bytes() == (other / rel).read_bytes()


def test_cadence_arithmetic(forged, tmp_path):
    root, cfg = forged
    prompts = tmp_path / "p.txt"
    prompts.write_text("a\nb\nc\n")
    run = tmp_path / "r"
    main(["--config", cfg, "--out", str(run), "--quiet", "train", "--data", str(root / "data"), "--steps", "200", "--cadence", "50", "--prompts", str(prompts)])
    assert len(list(csv.DictReader(open(run / "fep.csv")))) == 4


def test_train_lock(forged, tmp_path):
    root, cfg = forged
    run = tmp_path / "locked"
    run.mkdir()
    with FileLock(str(run / ".train.lock")):
        assert main(["--config", cfg, "--out", str(run), "--quiet", "train", "--data", str(root / "data"), "--steps", "1"]) == 2


def test_surgery_modes(trained, tmp_path, capsys):
    root, cfg, run, _ = trained
    fresh = run / "checkpoints" / "step_000000.ckpt"
    trained_ck = run / "checkpoints" / "step_000008.ckpt"
    before = _digest([fresh, trained_ck])
    assert main(["surgery", str(fresh), str(tmp_path / "c0.ckpt")]) == 0
    assert (tmp_path / "c0.ckpt").read_bytes() == fresh.read_bytes()
    assert main(["surgery", str(trained_ck), str(tmp_path / "d.ckpt"), "--mode", "dirty"]) == 0
    assert (tmp_path / "d.ckpt").read_bytes() == trained_ck.read_bytes()
    capsys.readouterr()
    assert main(["surgery", str(trained_ck), str(tmp_path / "c1.ckpt")]) == 0
    out = capsys.readouterr().out
    assert "block   0  LoRA discarded" in out and "block   2  LoRA retained" in out
    assert main(["surgery", str(tmp_path / "c1.ckpt"), str(tmp_path / "c2.ckpt")]) == 0
    assert (tmp_path / "c1.ckpt").read_bytes() == (tmp_path / "c2.ckpt").read_bytes()
    assert _digest([fresh, trained_ck]) == before
    assert main(["surgery", str(trained_ck), str(trained_ck)]) == 1


def test_fep_rows(trained, tmp_path, capsys):
    root, cfg, run, prompts = trained
    ck = str(run / "checkpoints" / "step_000008.ckpt")
    pristine = str(run / "checkpoints" / "step_000000.ckpt")
    capsys.readouterr()
    assert main(["--config", cfg, "fep", ck, ck, "--prompts", str(prompts), "--report", str(tmp_path / "f.csv")]) == 0
    row = list(csv.DictReader(open(tmp_path / "f.csv")))[0]
    assert float(row["ssf"]) == 1.0 and float(row["ssfd"]) == 0.0
    assert capsys.readouterr().out.startswith("checkpoint_a,checkpoint_b,seed_a,seed_b,ssf,ssfd")
    main(["--config", cfg, "fep", pristine, pristine, "--seed-b", "1", "--prompts", str(prompts), "--report", str(tmp_path / "b.csv")])
    base = list(csv.DictReader(open(tmp_path / "b.csv")))[0]
    assert float(base["ssf"]) < 1.0 and base["seed_b"] == "1"
    main(["--config", cfg, "fep", pristine, ck, "--prompts", str(prompts), "--report", str(tmp_path / "t.csv")])
    assert float(list(csv.DictReader(open(tmp_path / "t.csv")))[0]["ssf"]) < 1.0


def test_spectra_outputs(trained, tmp_path):
    root, cfg, run, _ = trained
    ck0 = str(run / "checkpoints" / "step_000000.ckpt")
    ck8 = str(run / "checkpoints" / "step_000008.ckpt")
    assert main(["--out", str(tmp_path / "same"), "--quiet", "spectra", ck0, ck0, "--k", "16"]) == 0
    summary = json.loads((tmp_path / "same" / "spectra" / "summary.json").read_text())
    assert summary["total_intruders"] == 0
    assert main(["--out", str(tmp_path / "post"), "--quiet", "spectra", ck0, ck8, "--targets", "q", "v"]) == 0
    out = tmp_path / "post" / "spectra"
    assert {"heatmap.csv", "spectrum.csv", "summary.json", "heatmap-q.png", "heatmap-v.png", "spectrum.png"} <= {p.name for p in out.iterdir()}
    summary = json.loads((out / "summary.json").read_text())
    assert summary["k"] == 64 and summary["eps"] == 0.5
    assert summary["targets"] == ["q", "v"] and "R_cond" in summary


def test_spectra_skips_showdown_on_mismatched_widths(tmp_path):
    cfg = ModelConfig(**{**TINY_MODEL, "text_dim": 16})
    Checkpoint.fresh(cfg).save(tmp_path / "a.ckpt")
    assert main(["--out", str(tmp_path), "--quiet", "spectra", str(tmp_path / "a.ckpt"), str(tmp_path / "a.ckpt"), "--no-figures"]) == 0
    summary = json.loads((tmp_path / "spectra" / "summary.json").read_text())
    assert "R_cond" not in summary and "16" in summary["showdown_skipped"]


def test_spectra_defaults_echo_k_and_eps():
    assert DEFAULTS["spectra"]["k"] == 64 and DEFAULTS["spectra"]["eps"] == 0.5


def test_svp_ingest_cli(tmp_path, capsys):
    scores = tmp_path / "s.csv"
    scores.write_text("metric,variant,value\nX-CLIP Score,Baseline,25.390\n")
    assert main(["--out", str(tmp_path), "svp-ingest", str(scores)]) == 0
    assert "25.390" in capsys.readouterr().out
    assert "25.390" in (tmp_path / "svp-table.csv").read_text()


def test_error_exit_codes(tmp_path, capsys):
    assert main(["fep", str(tmp_path / "nope.ckpt"), str(tmp_path / "nope.ckpt")]) == 2
    assert "nope.ckpt" in capsys.readouterr().err
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 1
    with pytest.raises(SystemExit) as err:
        main(["spectra", "a"])
    assert err.value.code == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["--config", str(bad), "forge"]) == 1
    bad.write_text(json.dumps({"nonsense": {}}))
    assert main(["--config", str(bad), "forge"]) == 1
    assert main(["--config", str(tmp_path / "missing.json"), "forge"]) == 2
    assert main(["--out", str(tmp_path / "x"), "train", "--data", str(tmp_path / "none")]) == 2


def test_numerical_exit_code(tmp_path, monkeypatch):
    from physctrl import spectra

    a = Checkpoint.fresh(ModelConfig(**TINY_MODEL))
    a.save(tmp_path / "a.ckpt")

    def boom(*args, **kwargs):
        raise spectra.NumericalError("SVD did not converge")

    monkeypatch.setattr("physctrl.pipeline.depth_sweep", boom)
    assert main(["--out", str(tmp_path), "spectra", str(tmp_path / "a.ckpt"), str(tmp_path / "a.ckpt")]) == 3
