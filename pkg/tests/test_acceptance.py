"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v``. Criteria 10 and 11
train the default toy model and take several minutes on one CPU core.
"""

import itertools
import math
import time

import numpy as np
import pytest
import torch

from physctrl.adapter_net import (
    Checkpoint,
    LatentCodec,
    ModelConfig,
    OptimConfig,
    Trainer,
    block_forward,
    load_training_set,
    make_training_set,
    model_forward,
    sample_batch,
    surgery_prune,
    text_embedding,
    velocity_loss,
)
from physctrl.control_space import PyramidPlan, map_exposure, map_kelvin, map_log_centered, pyramid_sample
from physctrl.drift_probe import (
    DriftSeries,
    EmbeddingSet,
    GaussianStats,
    ProbeConfig,
    default_prompts,
    default_provider,
    drift_rate,
    fep_generate,
    frechet_distance,
    probe_embeddings,
    ssf_score,
    ssfd_score,
)
from physctrl.spectra import depth_sweep, intruder_count, showdown_checkpoint
from physctrl.synth import (
    ForgeOptions,
    SceneParams2D,
    SceneParams3D,
    apply_white_balance,
    build_dataset,
    gradient_energy,
    random_scene_2d,
    random_scene_3d,
    render_dof,
    render_motion_blur,
    render_sharp,
)
from physctrl.synth.dataset import exhaustive_combinations, expected_entry_count
from physctrl.synth.dof import calibrated_kappa, focus_mask, layer_radii
from physctrl.synth.raster import REC709

TINY = ModelConfig(n_blocks=3, model_dim=8, n_heads=2, text_dim=6, n_cond_tokens=2, adapter_dim=5, lora_rank=2, n_text_tokens=3)


@pytest.fixture
def verdict(capsys):
    """Print one PASS/FAIL line for a criterion, then assert it."""

    def report(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {n}: {detail}"

    return report


def _perturbed(cfg, seed=1, scale=0.3):
    ck = Checkpoint.fresh(cfg)
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in ck.params.values():
            p.add_(scale * torch.randn(p.shape, generator=g, dtype=p.dtype))
    return ck


def _fd_rel_errors(fn, tensors, h=1e-6):
    for t in tensors:
        t.grad = None
    fn().backward()
    errs = []
    for t in tensors:
        analytic = t.grad.detach().clone().reshape(-1)
        numeric = torch.zeros_like(analytic)
        flat = t.data.view(-1)
        for j in range(flat.numel()):
            old = flat[j].item()
            with torch.no_grad():
                flat[j] = old + h
                up = fn().item()
                flat[j] = old - h
                down = fn().item()
                flat[j] = old
            numeric[j] = (up - down) / (2 * h)
        denom = max(float(numeric.norm()), float(analytic.norm()), 1e-12)
        errs.append(float((numeric - analytic).norm()) / denom)
    return errs


# 1 ----------------------------------------------------------------------------------


def test_c01_pyramid_arithmetic(verdict, tmp_path):
    t0 = time.perf_counter()
    plan = PyramidPlan()
    conds = pyramid_sample(plan)
    per_layer = [sum(1 for c in conds if c.layer_index == i) for i in range(5)]
    manifest = build_dataset("shutter", plan, 6, tmp_path, ForgeOptions(canvas=(32, 32), n_frames=1, subframes=2))
    n_exhaustive = sum(1 for _ in exhaustive_combinations(plan, 6))
    elapsed = time.perf_counter() - t0
    ok = (
        per_layer == [9, 7, 5, 3, 1]
        and len(conds) == 25
        and expected_entry_count(plan, 6) == 150
        and len(manifest.entries) == 150
        and n_exhaustive == 4500
        and n_exhaustive // len(manifest.entries) == 30
        and elapsed < 60
    )
    verdict(1, ok, f"layers {per_layer}, {len(conds)} conditions, {len(manifest.entries)} entries, exhaustive {n_exhaustive} (x{n_exhaustive / len(manifest.entries):g}), {elapsed:.1f}s")


# 2 ----------------------------------------------------------------------------------


def test_c02_blur_physics(verdict):
    t0 = time.perf_counter()
    exposures = [map_exposure(c) for c in np.linspace(1.0, -1.0, 7)]
    assert all(a < b for a, b in zip(exposures, exposures[1:]))
    pairs = violations = 0
    bit_exact = True
    for seed in range(20):
        scene = random_scene_2d(1000 + seed, SceneParams2D())
        t = 0.1
        bit_exact &= np.array_equal(render_motion_blur(scene, t, 0.0), render_sharp(scene, t))
        energy = [gradient_energy(render_motion_blur(scene, t, e)) for e in exposures]
        for i, j in itertools.combinations(range(7), 2):
            pairs += 1
            violations += energy[j] > energy[i]
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and bit_exact and pairs == 420 and elapsed < 120
    verdict(2, ok, f"{pairs} ordered pairs over 20 scenes at 512px, {violations} violations, exposure 0 bit-exact={bit_exact}, {elapsed:.1f}s")


# 3 ----------------------------------------------------------------------------------


def test_c03_white_balance(verdict):
    rng = np.random.default_rng(3)
    frame = rng.uniform(0.0, 1.0, (32, 32, 3))
    identity_err = float(np.max(np.abs(apply_white_balance(frame, 6500.0) - frame)))
    worst_luma = 0.0
    for _ in range(50):
        f = rng.uniform(0.05, 0.45, (24, 24, 3))
        k = map_kelvin(rng.uniform(-1, 1))
        out = apply_white_balance(f, k, preserve_luma=True)
        assert out.max() < 1.0  # unclamped
        worst_luma = max(worst_luma, abs(np.mean(out @ REC709) / np.mean(f @ REC709) - 1.0))
    gray = np.full((4, 4, 3), 0.3)
    kelvins = np.linspace(2000.0, 10000.0, 7)
    ratios = [float(apply_white_balance(gray, k)[..., 0].mean() / apply_white_balance(gray, k)[..., 2].mean()) for k in kelvins]
    decreasing = all(a > b for a, b in zip(ratios, ratios[1:]))
    ok = identity_err < 1e-6 and worst_luma < 1e-4 and decreasing
    verdict(3, ok, f"6500K identity err {identity_err:.1e}, worst luma rel err {worst_luma:.1e} over 50 frames, R/B {np.round(ratios, 3).tolist()}")


# 4 ----------------------------------------------------------------------------------


def test_c04_thin_lens_dof(verdict):
    cs = np.linspace(-1.0, 1.0, 7)
    in_focus_zero = bg_decreasing = True
    worst_mad = 0.0
    for seed in range(5):
        scene = random_scene_3d(seed, SceneParams3D(canvas=(192, 192)))
        kappa = calibrated_kappa(192)
        fnums = [map_log_centered(c, ForgeOptions().fstop_range) for c in cs]
        radii = [layer_radii(scene, f, kappa) for f in fnums]
        focus_idx = [o.depth for o in scene.objects].index(scene.focus_depth)
        in_focus_zero &= all(r[focus_idx] == 0.0 for r in radii)
        walls = [r["wall"] for r in radii]
        bg_decreasing &= all(a > b for a, b in zip(walls, walls[1:]))
        mask = focus_mask(scene)
        frames = [render_dof(scene, c) for c in cs]
        worst_mad = max(worst_mad, max(float(np.mean(np.abs(f[mask] - frames[0][mask]))) for f in frames))
    ok = in_focus_zero and bg_decreasing and worst_mad < 1e-3
    verdict(4, ok, f"in-focus radius 0: {in_focus_zero}, background radius strictly decreasing over 7 stops: {bg_decreasing}, focus MAD {worst_mad:.1e}")


# 5 ----------------------------------------------------------------------------------


def test_c05_block_fidelity(verdict):
    t0 = time.perf_counter()
    g = torch.Generator().manual_seed(0)
    x0 = torch.randn(2, 6, TINY.model_dim, generator=g, dtype=torch.float64)
    text = torch.randn(2, TINY.n_text_tokens, TINY.text_dim, generator=g, dtype=torch.float64)
    fresh = Checkpoint.fresh(TINY)
    with torch.no_grad():
        zero_init = all(torch.equal(model_forward(x0, text, c, fresh), model_forward(x0, text, c, fresh, pristine=True)) for c in (-1.0, 0.0, 0.7))

    ck = _perturbed(TINY)
    x = torch.randn(2, 5, TINY.model_dim, generator=g, dtype=torch.float64)
    txt = torch.randn(2, 3, TINY.text_dim, generator=g, dtype=torch.float64)
    w, lora, ad = ck.block_weights(2), ck.lora(2), ck.adapter(2)
    with torch.no_grad():
        gate0 = torch.equal(block_forward(x, txt, 0.4, w, lora, ad, 0.0, TINY.n_heads), block_forward(x, txt, 0.4, w, lora, None, 0.5, TINY.n_heads))
        outs = {gv: block_forward(x, txt, 0.3, w, lora, ad, gv, TINY.n_heads) for gv in (0.0, 0.5, 1.0)}
    lin_err = float(torch.max(torch.abs((outs[0.5] - outs[0.0]) - 0.5 * (outs[1.0] - outs[0.0]))))

    cfg = ModelConfig(**{**TINY.__dict__, "gate_mode": "learned"})
    ck = _perturbed(cfg)
    batch = {
        "x0": torch.randn(2, 6, cfg.model_dim, generator=g, dtype=torch.float64),
        "eps": torch.randn(2, 6, cfg.model_dim, generator=g, dtype=torch.float64),
        "t": torch.rand(2, generator=g, dtype=torch.float64),
        "text": torch.randn(2, cfg.n_text_tokens, cfg.text_dim, generator=g, dtype=torch.float64),
        "c": torch.rand(2, generator=g, dtype=torch.float64) * 2 - 1,
    }
    names = ck.trainable_names()
    errs = _fd_rel_errors(lambda: velocity_loss(batch, ck), [ck.params[n] for n in names])
    elapsed = time.perf_counter() - t0
    ok = zero_init and gate0 and lin_err < 1e-10 and max(errs) < 1e-4 and elapsed < 300
    verdict(5, ok, f"zero-init bit-exact {zero_init}, g=0 text-only {gate0}, gate linearity {lin_err:.1e}, max FD rel err {max(errs):.1e} over {len(names)} tensors, {elapsed:.1f}s")


# 6 ----------------------------------------------------------------------------------


def test_c06_surgery(verdict):
    cfg = ModelConfig()
    ck = _perturbed(cfg)
    out = surgery_prune(ck)
    shallow = all(out.merged_weight(i, t).numpy().tobytes() == out.frozen[f"blocks.{i}.w{t}"].numpy().tobytes() for i in range(8) for t in "qkvo")
    deep_lora = all(torch.equal(out.merged_weight(i, t), ck.merged_weight(i, t)) for i in range(8, 12) for t in "qkvo")
    deep_adapter = all(torch.equal(out.params[n], ck.params[n]) for n in ck.params if n.startswith("adapter."))
    idem = surgery_prune(out).to_bytes() == out.to_bytes()
    ok = cfg.n_blocks == 12 and shallow and deep_lora and deep_adapter and idem
    verdict(6, ok, f"blocks 0-7 byte-equal originals {shallow}, blocks 8-11 LoRA {deep_lora} adapter {deep_adapter}, idempotent {idem}")


# 7 ----------------------------------------------------------------------------------


def test_c07_frechet(verdict):
    rng = np.random.default_rng(7)
    a = rng.standard_normal((6, 6))
    g = GaussianStats(rng.standard_normal(6), a @ a.T)
    self_fd = abs(frechet_distance(g, g))

    mu2 = rng.standard_normal(6)
    eq_err = abs(frechet_distance(g, GaussianStats(mu2, g.cov)) - float(np.sum((g.mean - mu2) ** 2)))

    da, db = rng.uniform(0.1, 3, 5), rng.uniform(0.1, 3, 5)
    diag_err = abs(frechet_distance(GaussianStats(np.zeros(5), np.diag(da)), GaussianStats(np.zeros(5), np.diag(db))) - float(np.sum((np.sqrt(da) - np.sqrt(db)) ** 2)))

    b = rng.standard_normal((6, 6))
    h = GaussianStats(rng.standard_normal(6), b @ b.T + 0.1 * np.eye(6))
    sym_err = abs(frechet_distance(g, h) - frechet_distance(h, g))

    worst_1d = 0.0
    for _ in range(1000):
        m1, m2 = rng.normal(0, 3, 2)
        v1, v2 = rng.uniform(1e-3, 5, 2)
        expect = (m1 - m2) ** 2 + v1 + v2 - 2 * math.sqrt(v1 * v2)
        worst_1d = max(worst_1d, abs(frechet_distance(GaussianStats([m1], [[v1]]), GaussianStats([m2], [[v2]])) - expect))
    ok = self_fd < 1e-8 and eq_err < 1e-9 and diag_err < 1e-9 and sym_err < 1e-9 and worst_1d < 1e-8
    verdict(7, ok, f"FD(G,G) {self_fd:.1e}, equal-cov {eq_err:.1e}, diagonal {diag_err:.1e}, symmetry {sym_err:.1e}, 1-D fuzz max {worst_1d:.1e}")


# 8 ----------------------------------------------------------------------------------


def test_c08_fep_contracts(verdict):
    cfg = ModelConfig(n_blocks=3, model_dim=64, n_heads=4, text_dim=16, adapter_dim=32, lora_rank=4)
    pristine = Checkpoint.fresh(cfg)
    prompts = default_prompts()[:16]
    provider = default_provider()
    e1 = probe_embeddings(pristine, prompts, provider, pristine=True)
    e2 = probe_embeddings(pristine, prompts, provider, pristine=True)
    ssf, ssfd = ssf_score(e1, e2), ssfd_score(e1, e2)

    series = DriftSeries()
    for step in range(50, 450, 50):
        series.append(step, 1.0, 0.25 * step + 1.0)
    slope = drift_rate(series)

    probe = ProbeConfig(n_frames=4, denoise_steps=1)
    ck = _perturbed(cfg, scale=0.05)
    a, b = fep_generate(ck, prompts[:4], probe), fep_generate(ck, prompts[:4], probe)
    deterministic = all(x.shape[0] == 4 and np.array_equal(x, y) for x, y in zip(a, b))
    ok = ssf == 1.0 and ssfd == 0.0 and slope == 0.25 and deterministic
    verdict(8, ok, f"self SSF {ssf!r}, SS-FD {ssfd!r}, planted slope 0.25 -> {slope!r}, 4-frame probe deterministic {deterministic}")


# 9 ----------------------------------------------------------------------------------


def test_c09_intruder_check(verdict):
    rng = np.random.default_rng(9)
    w = rng.standard_normal((16, 8))
    same = intruder_count(w, w.copy(), k=8).n_intruders

    u = np.linalg.svd(w, full_matrices=False)[0]
    x = rng.standard_normal(16)
    for col in u.T:
        x -= (x @ col) * col
    x /= np.linalg.norm(x)
    y = rng.standard_normal(8)
    injected = w + 10.0 * np.linalg.norm(w, 2) * np.outer(x, y / np.linalg.norm(y))
    rep = intruder_count(w, injected, k=8)

    invariant = 0
    for _ in range(100):
        shape = tuple(rng.integers(3, 10, 2))
        a = rng.standard_normal(shape)
        b = a + rng.normal(0, rng.uniform(0.1, 2), shape)
        sa, sb = rng.uniform(1e-3, 1e3, 2)
        k = min(shape)
        r1, r2 = intruder_count(a, b, k), intruder_count(sa * a, sb * b, k)
        invariant += r1.n_intruders == r2.n_intruders and np.allclose(r1.s_max, r2.s_max, atol=1e-9)
    ok = same == 0 and rep.n_intruders >= 1 and rep.s_max[0] < 0.5 and invariant == 100
    verdict(9, ok, f"identical -> {same} intruders, injection -> {rep.n_intruders} (top S_max {rep.s_max[0]:.2e}), scaling invariance {invariant}/100")


# 10/11 shared data ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def one_shot_sets(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    cfg = ModelConfig()
    sets = {}
    for style in ("primitives", "noise"):
        build_dataset("shutter", PyramidPlan((7,), 0), 1, root / style, ForgeOptions(canvas=(128, 128), style=style))
        sets[style] = load_training_set(root / style / "dataset-manifest.json", LatentCodec(cfg.model_dim), cfg.n_text_tokens, cfg.text_dim)
    return sets


def _train(data, optim: OptimConfig, steps: int, seed: int = 0) -> Checkpoint:
    ck = Checkpoint.fresh(ModelConfig())
    trainer = Trainer(ck, optim)
    for s in range(steps):
        trainer.step(sample_batch(data, 4, seed, s))
    return ck


@pytest.mark.slow
def test_c10_complexity_direction(verdict, one_shot_sets):
    t0 = time.perf_counter()
    pristine = Checkpoint.fresh(ModelConfig())
    provider, prompts = default_provider(), default_prompts()
    ref = probe_embeddings(pristine, prompts, provider, pristine=True)
    result = {}
    for style, data in one_shot_sets.items():
        ck = _train(data, OptimConfig(lr=1e-3, warmup=20), 300)
        emb = probe_embeddings(ck, prompts, provider)
        result[style] = (ssfd_score(ref, emb), depth_sweep(pristine, ck, ("v",), 64, 0.5).total)
    elapsed = time.perf_counter() - t0
    (fd_p, in_p), (fd_n, in_n) = result["primitives"], result["noise"]
    ok = fd_n > fd_p and in_n > in_p and elapsed < 1800
    verdict(10, ok, f"final SS-FD noise {fd_n:.4f} vs primitives {fd_p:.4f}; intruders (k=64, eps=0.5) noise {in_n} vs primitives {in_p}; {elapsed:.0f}s")


@pytest.mark.slow
def test_c11_rank_factorization(verdict, one_shot_sets):
    data = one_shot_sets["primitives"]
    joint = showdown_checkpoint(_train(data, OptimConfig(lr=5e-3, warmup=20), 1000), tau=0.1)
    adapter_only = showdown_checkpoint(_train(data, OptimConfig(lr=5e-3, warmup=20, train_lora=False), 1000), tau=0.1)
    ok = joint.r_cond <= 0.25 * joint.r_text and adapter_only.r_cond > joint.r_cond
    verdict(11, ok, f"joint R_cond {joint.r_cond:g} vs R_text {joint.r_text:g} (limit {0.25 * joint.r_text:g}); adapter-only R_cond {adapter_only.r_cond:g}")


# 12 ---------------------------------------------------------------------------------


def test_c12_persistence(verdict, tmp_path):
    cfg = TINY
    data = make_training_set([[np.full((32, 32, 3), v)] for v in (0.2, 0.7)], [-0.5, 0.5], LatentCodec(cfg.model_dim), text_embedding("x", cfg.n_text_tokens, cfg.text_dim))

    def trained():
        ck = Checkpoint.fresh(cfg)
        tr = Trainer(ck, OptimConfig(lr=1e-3, warmup=2))
        for s in range(3):
            tr.step(sample_batch(data, 2, 0, s))
        tr.export_state()
        return ck

    ck = trained()
    ck.save(tmp_path / "a.ckpt")
    blob = (tmp_path / "a.ckpt").read_bytes()
    Checkpoint.load(tmp_path / "a.ckpt").save(tmp_path / "b.ckpt")
    ckpt_rt = (tmp_path / "b.ckpt").read_bytes() == blob
    equal_states = trained().to_bytes() == blob and Checkpoint.fresh(cfg).to_bytes() == Checkpoint.fresh(cfg).to_bytes()

    emb = EmbeddingSet("p", ["a", "b", "c"], np.random.default_rng(0).standard_normal((3, 5)).astype(np.float32))
    emb.save(tmp_path / "e.emb")
    EmbeddingSet.load(tmp_path / "e.emb").save(tmp_path / "f.emb")
    emb_rt = (tmp_path / "e.emb").read_bytes() == (tmp_path / "f.emb").read_bytes()
    ok = ckpt_rt and equal_states and emb_rt
    verdict(12, ok, f"checkpoint round-trip {ckpt_rt}, equal states -> equal bytes {equal_states}, embedding round-trip {emb_rt}")
