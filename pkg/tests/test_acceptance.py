"""Acceptance criteria 1-9, one test each.

Each test prints ``CRITERION n PASS|FAIL: ...`` with the measured values;
run with ``-s`` (or ``-rA``) to see them next to the pytest verdicts.
The training-based criteria share module-scoped runs (roughly 20 minutes on
one core in total).
"""
import dataclasses
import math
import time

import numpy as np
import pytest

from sdnfuse import cli, data, gradcheck, kernels, losses, metrics, trainer
from sdnfuse.data import SynthSpec
from sdnfuse.networks import fuse
from sdnfuse.trainer import RunConfig

# pinned tolerances
GRAD_TOL, GRAD_H, GRAD_SECONDS = 1e-5, 1e-5, 60.0
SIMPLEX_TOL = 1e-9
ENTROPY_TOL = 1e-10
SAM_MAX, RMSE8_MAX, FUSE_SECONDS = 5.0, 6.0, 600.0
BLOCK_TOL = 1e-12

ACCEPT_SPEC = SynthSpec(height=64, width=64, bands=31, msi_bands=3, ratio=8, c_true=5, sparsity=3, seed=0)
SEEDS = (0, 1, 2)


def verdict(n, ok, detail):
    print(f"CRITERION {n} {'PASS' if ok else 'FAIL'}: {detail}")
    return ok


def read_eval(path):
    header, row = path.read_text().splitlines()[:2]
    return {k: float(v) for k, v in zip(header.split(","), row.split(","))}


@pytest.fixture(scope="module")
def scene():
    return data.synth_generate(ACCEPT_SPEC)


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("accept") / "scene"
    assert cli.main(["synth", "--out", str(out), "--seed", str(ACCEPT_SPEC.seed)]) == 0
    return out


def fuse_argv(scene_dir, out, *extra):
    return ["fuse", "--hsi", str(scene_dir / "lr_hsi.hsc"), "--msi", str(scene_dir / "hr_msi.hsc"),
            "--response", str(scene_dir / "response.csv"), "--out", str(out), *extra]


@pytest.fixture(scope="module")
def ablation_runs(scene):
    """Per seed: full method, same HSI model with angle steps off, and the plain autoencoder."""
    Y_m = data.unfold(scene.hr_msi)
    lr_grid = scene.lr_hsi.shape[:2]
    runs = {}
    for seed in SEEDS:
        config = RunConfig(seed=seed)
        full = trainer.run_pipeline(scene.lr_hsi, scene.hr_msi, scene.response, config, scene.hr_hsi)

        # the decoder is frozen during the MSI phase, so full.decoder is still the Step-1 decoder
        _, _, msi = trainer.build_models(ACCEPT_SPEC.bands, ACCEPT_SPEC.msi_bands, config)
        S_m, _ = trainer.train_msi(Y_m, msi, full.decoder, full.S_h, lr_grid, ACCEPT_SPEC.ratio,
                                   scene.response, dataclasses.replace(config, use_angle=False))
        X_off = np.clip(data.fold(fuse(S_m, full.phi), ACCEPT_SPEC.height, ACCEPT_SPEC.width), 0.0, 1.0)

        plain_config = dataclasses.replace(config, representation="plain", lam=0.0)
        plain = trainer.run_pipeline(scene.lr_hsi, scene.hr_msi, scene.response, plain_config, scene.hr_hsi)
        runs[seed] = {"full": full, "angle_off": metrics.evaluate(X_off, scene.hr_hsi), "plain": plain}
    return runs


def test_criterion_1_gradient_correctness():
    t0 = time.perf_counter()
    reports = gradcheck.objective_suite(seed=0, pixels=20, c=5, bands=31, msi_bands=3, h=GRAD_H, tol=GRAD_TOL)
    elapsed = time.perf_counter() - t0
    worst = max(r.max_rel_error for r in reports.values())
    ok = all(r.ok for r in reports.values()) and worst < GRAD_TOL and elapsed < GRAD_SECONDS
    detail = "; ".join(f"{k}: {r.summary()}" for k, r in reports.items())
    assert verdict(1, ok, f"max rel err {worst:.2e} in {elapsed:.1f}s ({detail})")


def test_criterion_2_simplex_invariant(ablation_runs):
    full = ablation_runs[0]["full"]
    worst_dev, worst_min, logged = 0.0, math.inf, 0
    for trace in (full.hsi_trace, full.msi_trace):
        worst_dev = max(worst_dev, float(trace.column("rowsum_maxdev").max()))
        worst_min = min(worst_min, float(trace.column("s_min").min()))
        logged += len(trace)
    for S in (full.S_h, full.S_m):
        worst_dev = max(worst_dev, float(np.abs(S.sum(axis=1) - 1).max()))
        worst_min = min(worst_min, float(S.min()))
    ok = worst_dev < SIMPLEX_TOL and worst_min >= 0.0
    assert verdict(2, ok, f"{logged} logged steps, max |rowsum-1| {worst_dev:.2e}, min entry {worst_min:.2e}")


def test_criterion_3_entropy_ordering():
    rng = np.random.default_rng(0)
    rows = rng.dirichlet(np.ones(10), size=10_000)
    ok, parts = True, []
    for name in kernels.available_backends():
        previous = kernels.use_backend(name)
        try:
            one_hot = losses.entropy_sparsity(np.eye(10)).item()
            uniform = losses.entropy_sparsity(np.full((1, 10), 0.1)).item()
            h = np.array([losses.entropy_sparsity(r[None]).item() for r in rows])
        finally:
            kernels.use_backend(previous)
        good = (one_hot == 0.0 and abs(uniform - math.log(10)) < ENTROPY_TOL
                and np.all(h > 0) and np.all(h < math.log(10)))
        ok &= bool(good)
        parts.append(f"{name}: H(one-hot)={one_hot}, |H(uniform)-ln10|={abs(uniform - math.log(10)):.1e}, "
                     f"random in ({h.min():.3f}, {h.max():.3f})")
    assert verdict(3, ok, "; ".join(parts))


def test_criterion_4_synthetic_fusion(scene_dir, tmp_path):
    out = tmp_path / "fused"
    t0 = time.perf_counter()
    assert cli.main(fuse_argv(scene_dir, out)) == 0
    elapsed = time.perf_counter() - t0
    assert cli.main(["eval", "--est", str(out / "fused.hsc"), "--ref", str(scene_dir / "hr_hsi.hsc"),
                     "--out", str(tmp_path / "eval.csv")]) == 0
    report = read_eval(tmp_path / "eval.csv")
    ok = report["sam_degrees"] < SAM_MAX and report["rmse_8bit"] < RMSE8_MAX and elapsed < FUSE_SECONDS
    assert verdict(4, ok, f"SAM {report['sam_degrees']:.3f} deg, RMSE {report['rmse_8bit']:.3f} (8-bit), "
                          f"fuse {elapsed:.0f}s")


def test_criterion_5_sparse_dirichlet_ablation(ablation_runs):
    full = [ablation_runs[s]["full"].report.rmse_8bit for s in SEEDS]
    plain = [ablation_runs[s]["plain"].report.rmse_8bit for s in SEEDS]
    ok = np.mean(full) <= np.mean(plain)
    assert verdict(5, ok, f"HR HSI RMSE (8-bit) sparse Dirichlet {np.mean(full):.3f} {np.round(full, 3).tolist()} "
                          f"vs plain AE {np.mean(plain):.3f} {np.round(plain, 3).tolist()}")


def test_criterion_6_angle_ablation(ablation_runs):
    on = [ablation_runs[s]["full"].report.sam_degrees for s in SEEDS]
    off = [ablation_runs[s]["angle_off"].sam_degrees for s in SEEDS]
    ok = np.mean(on) <= np.mean(off)
    assert verdict(6, ok, f"SAM with angle steps {np.mean(on):.3f} {np.round(on, 3).tolist()} "
                          f"vs without {np.mean(off):.3f} {np.round(off, 3).tolist()}")


def test_criterion_7_determinism(scene_dir, tmp_path):
    budget = ["--set", "hsi_iters=800", "--set", "msi_iters=400", "--seed", "11"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(fuse_argv(scene_dir, a, *budget)) == 0
    assert cli.main(fuse_argv(scene_dir, b, *budget)) == 0
    names = ["fused.hsc", "hsi_trace.csv", "msi_trace.csv", "hsi.ckpt", "msi.ckpt"]
    same = {n: (a / n).read_bytes() == (b / n).read_bytes() for n in names}
    assert verdict(7, all(same.values()), ", ".join(f"{n} {'identical' if v else 'DIFFERS'}" for n, v in same.items()))


def test_criterion_8_data_operators():
    rng = np.random.default_rng(8)
    cube = rng.uniform(size=(512, 512, 31))
    small = data.block_downsample(cube, 32)
    brute = np.empty((16, 16, 31))
    for i in range(16):
        for j in range(16):
            block = cube[32 * i:32 * (i + 1), 32 * j:32 * (j + 1), :].reshape(-1, 31)
            brute[i, j] = [math.fsum(block[:, k]) / block.shape[0] for k in range(31)]
    err = float(np.abs(small - brute).max())
    M = data.unfold(cube)
    round_trip = (data.fold(M, 512, 512).tobytes() == cube.tobytes()
                  and data.unfold(data.fold(M, 512, 512)).tobytes() == M.tobytes())
    ok = small.shape == (16, 16, 31) and err < BLOCK_TOL and round_trip
    assert verdict(8, ok, f"shape {small.shape}, max |block - brute| {err:.1e}, fold/unfold bitwise {round_trip}")


def test_criterion_9_metric_sanity():
    rng = np.random.default_rng(9)
    X = rng.uniform(0.01, 1.0, size=(32, 32, 31))
    sams = {k: metrics.sam(X, k * X) for k in (0.5, 2.0, 3.7, 1e-3, 250.0)}
    zeros = np.zeros((32, 32, 31))
    rmse8 = (metrics.evaluate(zeros, zeros + 0.1).rmse_8bit, metrics.evaluate(zeros + 0.1, zeros).rmse_8bit)
    ok = all(v == 0.0 for v in sams.values()) and rmse8 == (25.5, 25.5)
    assert verdict(9, ok, f"sam(X, kX) {sams}, rmse_8bit of 0.1 offset {rmse8}")
