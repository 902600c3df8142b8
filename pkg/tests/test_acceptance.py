"""End-to-end acceptance checks, one test per criterion.

Every test is named ``test_criterion_<n>_...``; a summary hook in
``conftest.py`` prints one PASS/FAIL line per criterion at the end of the
run.  Run just this module with::

    pytest tests/test_acceptance.py -v

Criterion 2 simulates the full 1024 x 1024 channel with 100 realizations and
takes several minutes.
"""

import numpy as np
import pytest

from turbqkd.cli import main as cli_main
from turbqkd.forecaster import (
    GruForecaster,
    GruLayer,
    PlateauSchedule,
    TrainConfig,
    evaluate,
    persistence_forecast,
    rmse_report,
    train,
)
from turbqkd.importance import feature_importance
from turbqkd.optics import (
    ANGLE,
    OAM,
    BeamParams,
    GridSpec,
    beam_geometry,
    beam_radius,
    lg_mode,
    mode_set,
    overlap,
    propagate,
)
from turbqkd.qkd import ChannelConfig, key_rate, reported_bits, run_table, security_threshold
from turbqkd.synth import SynthConfig, write_dataset
from turbqkd.timeseries import (
    add_time_features,
    compute_stats,
    denormalize,
    make_windows,
    n_outputs,
    normalize,
    prepare_series,
    split_dataset,
)
from turbqkd.turbulence import NOLL_RESIDUALS, draw_coefficients, fried_r0, zernike_covariance

from conftest import make_series

# Reference (QDER, b/p) pairs for d = 8, clamped at zero.
TABLE_ROWS = [
    (0.0818, 1.72), (0.0233, 2.54), (0.178, 0.64), (0.0540, 2.09), (0.2177, 0.266),
    (0.5507, 0.0), (0.7700, 0.0), (0.4147, 0.0), (0.9207, 0.0), (0.5196, 0.0),
]


# ------------------------------------------------------------------ 1

def test_criterion_1_key_rate_fidelity():
    """key rate reproduces the reference bits per photon"""
    misses = [(e, bp, reported_bits(8, e)) for e, bp in TABLE_ROWS if abs(reported_bits(8, e) - bp) > 0.01]
    assert key_rate(8, 0.0) == 3.0
    assert security_threshold(8) == pytest.approx(0.247, abs=0.002)
    assert not misses, "rows outside +-0.01: " + ", ".join(
        f"e={e}: got {got:.6f}, expected {bp}" for e, bp, got in misses)


# ------------------------------------------------------------------ 2

@pytest.mark.slow
def test_criterion_2_qkd_simulation_band():
    """default channel, 100 realizations: trends, ordering and weak-turbulence band"""
    config = ChannelConfig()
    levels = (1e-16, 1e-15, 1e-14)
    report = run_table(levels, config=config)
    q = {(r.cn2, r.basis): r.qder for r in report.rows}
    summary = ", ".join(f"{b} {c:.0e}: {100 * q[(c, b)]:.2f}%" for c in levels for b in (OAM, ANGLE))
    problems = []
    for b in (OAM, ANGLE):
        if not q[(1e-16, b)] < q[(1e-15, b)] < q[(1e-14, b)]:
            problems.append(f"{b} QDER not strictly increasing")
    for c in levels:
        if not q[(c, ANGLE)] < q[(c, OAM)]:
            problems.append(f"ANGLE >= OAM at {c:.0e}")
    if not 0.04 <= q[(1e-16, OAM)] <= 0.14:
        problems.append("OAM QDER at 1e-16 outside [4%, 14%]")
    if not 0.01 <= q[(1e-16, ANGLE)] <= 0.06:
        problems.append("ANGLE QDER at 1e-16 outside [1%, 6%]")
    for r in report.rows:
        if r.cn2 >= 1e-15 and r.bits_per_photon != 0:
            problems.append(f"{r.basis} at {r.cn2:.0e} still secure ({r.bits_per_photon:.3f} b/p)")
    assert not problems, "; ".join(problems) + f" [{summary}]"


# ------------------------------------------------------------------ 3

def test_criterion_3_optics_invariants():
    """orthonormality, mutual unbiasedness, receiver radius and power conservation"""
    params, grid = BeamParams(), GridSpec()
    oam = mode_set(OAM, 0.0, params, grid)
    ang = mode_set(ANGLE, 0.0, params, grid)
    eye = np.eye(8)
    g_oam = np.array([[overlap(a, b) for b in oam] for a in oam])
    g_ang = np.array([[overlap(a, b) for b in ang] for a in ang])
    cross = np.array([[abs(overlap(a, b)) ** 2 for b in ang] for a in oam])
    assert np.max(np.abs(g_oam - eye)) <= 1e-6
    assert np.max(np.abs(g_ang - eye)) <= 1e-6
    assert np.max(np.abs(cross - 1 / 8)) <= 1e-6

    moved = propagate(lg_mode(1, 0.0, params, grid), params.length, params)
    w_l, _, _ = beam_geometry(params.length, params)
    assert w_l == pytest.approx(0.0819, abs=5e-5)
    assert beam_radius(moved, ell=1) == pytest.approx(w_l, rel=5e-3)
    for f in oam + ang:
        out = propagate(f, params.length, params)
        assert abs(out.power() - f.power()) / f.power() < 1e-10


# ------------------------------------------------------------------ 4

def test_criterion_4_turbulence_statistics():
    """coefficient variances, tilt oracle and r0 scaling"""
    cov = zernike_covariance(36, 0.30, fried_r0(1e-15, 810e-9, 5400.0))
    draws = np.stack([draw_coefficients(cov, seed) for seed in range(10_000)])
    empirical = np.mean(draws[:, :9] ** 2, axis=0)
    assert np.all(np.abs(empirical / np.diag(cov)[:9] - 1) <= 0.05)

    d_over_r0 = 0.30 / 0.05
    tilt = zernike_covariance(3, 0.30, 0.05)[0, 0]
    oracle = (NOLL_RESIDUALS[0] - NOLL_RESIDUALS[1]) * d_over_r0 ** (5 / 3)
    assert tilt == pytest.approx(0.448 * d_over_r0 ** (5 / 3), rel=1e-2)
    assert tilt == pytest.approx(oracle, rel=1e-2)

    base = fried_r0(1e-16, 810e-9, 5400.0)
    for s in (2.0, 10.0, 100.0, 0.37):
        assert fried_r0(s * 1e-16, 810e-9, 5400.0) / base == pytest.approx(s ** (-3 / 5), rel=1e-12)


# ------------------------------------------------------------------ 5

def _fd_grad(model, x, y, name, eps=1e-6):
    p = model.params()[name]
    g = np.zeros_like(p)
    for i in np.ndindex(p.shape):
        old = p[i]
        p[i] = old + eps
        lp, _ = model.loss_and_grads(x, y)
        p[i] = old - eps
        lm, _ = model.loss_and_grads(x, y)
        p[i] = old
        g[i] = (lp - lm) / (2 * eps)
    return g


def _plateau_oracle(losses, patience, threshold):
    """Epochs at which a reduction is due: ``patience`` epochs in a row
    without beating the best loss by more than ``threshold``."""
    best, stale, fires = np.inf, 0, []
    for epoch, v in enumerate(losses):
        if best - v > threshold:
            best, stale = v, 0
            continue
        stale += 1
        if stale == patience:
            fires.append(epoch)
            stale = 0
    return fires


def test_criterion_5_forecaster_correctness(tmp_path):
    """gradients, zero-weight decay, beating persistence, plateau schedule"""
    # (a) BPTT against central differences
    for seed in range(3):
        rng = np.random.default_rng(seed)
        model = GruForecaster(3, (4,), n_out=4, seed=seed)
        for v in model.params().values():
            v += rng.normal(0, 0.3, v.shape)
        x, y = rng.normal(size=(2, 10, 3)), rng.normal(size=(2, 4))
        _, grads = model.loss_and_grads(x, y)
        for name in model.params():
            num = _fd_grad(model, x, y, name)
            err = np.linalg.norm(grads[name] - num) / max(np.linalg.norm(num), 1e-300)
            assert err < 1e-4, (seed, name, err)

    # (b) zero weights: every gate is 1/2 and the candidate is 0
    layer = GruLayer(3, 5)
    h0 = np.random.default_rng(0).normal(size=5)
    hs, _ = layer.forward(np.zeros((1, 12, 3)), h0[None])
    for t in range(12):
        assert np.linalg.norm(hs[0, t]) == 0.5 ** (t + 1) * np.linalg.norm(h0)

    # (c) synthetic diurnal data: GRU vs persistence on validation
    write_dataset(SynthConfig(days=20, seed=0), tmp_path / "w.csv", tmp_path / "s.csv")
    series = add_time_features(prepare_series(tmp_path / "w.csv", tmp_path / "s.csv"))
    splits = split_dataset(make_windows(series, stride=60), "B")
    stats = compute_stats(splits.train)
    tr, va = splits.train.normalized(stats), splits.validation.normalized(stats)
    model = GruForecaster(len(tr.features), (16,), tr.n_out, seed=0)
    result = train(model, (tr, va), TrainConfig(initial_lr=3e-3, max_epochs=15, micro_batch=32))
    gru = evaluate(model, va).mean_rmse
    base = rmse_report(persistence_forecast(va), va.targets()).mean_rmse
    assert 1 - gru / base >= 0.20, f"GRU RMSE {gru:.4f} vs persistence {base:.4f}"

    # the reductions logged by training agree with the oracle on its losses
    losses = [r.val_mse for r in result.history]
    fired = [r.epoch for r in result.history if r.lr_reduced]
    assert fired == _plateau_oracle(losses, 15, 1e-5)
    # and a stalled sequence fires on exactly the fifteenth stale epoch
    stalled = [1.0, 0.5, 0.25] + [0.25 - 1e-7 * i for i in range(1, 40)]
    sched = PlateauSchedule(1e-3, 0.1, 15, 1e-5)
    flags = [sched.step(v) for v in stalled]
    assert [i for i, f in enumerate(flags) if f] == _plateau_oracle(stalled, 15, 1e-5) == [17, 32]


# ------------------------------------------------------------------ 6

def test_criterion_6_pipeline_arithmetic():
    """output counts, input length and normalization round trip"""
    assert n_outputs(360, 15) == 24
    assert n_outputs(360, 1) == 360
    minutes = np.arange(1080 + 45)
    series = make_series(-15 + np.sin(minutes / 200.0))
    ds = make_windows(series, features=("log10_cn2", "t_x", "t_y"))
    assert ds.inputs().shape == (4, 720, 3)
    assert len(make_windows(make_series(np.full(1079, -15.0)), features=("log10_cn2",))) == 0

    stats = compute_stats(ds)
    x = ds.inputs()
    back = denormalize(normalize(x, stats), stats)
    assert np.max(np.abs(back - x)) <= 1e-12 * np.max(np.abs(x))


# ------------------------------------------------------------------ 7

class _Windows:
    def __init__(self, x, y, features):
        self.x, self.y, self.features = x, y, features

    def __len__(self):
        return len(self.x)

    def inputs(self, idx):
        return self.x[idx]

    def targets(self, idx):
        return self.y[idx]


def test_criterion_7_pfi_sanity():
    """ignored feature scores 1, single used feature dominates"""
    features = ("temperature", "solar_radiation", "relative_humidity", "log10_cn2", "t_x", "t_y")
    rng = np.random.default_rng(0)
    x = rng.normal(size=(500, 24, len(features)))

    # a GRU whose input weights for one feature are zero
    model = GruForecaster(len(features), (8,), n_out=4, seed=1)
    model.layers[0].W[:, features.index("solar_radiation")] = 0.0
    y = rng.normal(size=(500, 4))
    report = feature_importance(model, _Windows(x, y, features), features=["solar_radiation"])
    assert np.all(report["solar_radiation"].scores == 1.0)

    # a GRU that only reads log10_cn2: one unit, update gate closed
    model = GruForecaster.zeros(len(features), (1,), n_out=4)
    model.layers[0].b[0] = -40.0
    model.layers[0].W[2, features.index("log10_cn2")] = 1.0
    model.Wd[:, 0] = [1.0, 1.5, 2.0, 2.5]
    y = model.predict(x) + rng.normal(0, 0.05, size=(500, 4))
    report = feature_importance(model, _Windows(x, y, features), repeats=3)
    assert report["log10_cn2"].mean > 2
    for name in features:
        if name != "log10_cn2":
            assert 0.95 <= report[name].mean <= 1.05, name


# ------------------------------------------------------------------ 8

def _tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_8_determinism(tmp_path):
    """qkd and train outputs are byte-identical across runs and worker counts"""
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\nseed = 11\n[synth]\ndays = 8\n[windows]\nstride = 60\n[model]\nhidden_sizes = 6\n"
                   "[train]\nmax_epochs = 3\nmicro_batch = 4\n[qkd]\ngrid_n = 256\nn_realizations = 6\n"
                   "levels = 1e-16, 1e-15\n")
    assert cli_main(["synth", "--config", str(ini), "--out-dir", str(tmp_path / "raw")]) == 0
    assert cli_main(["ingest", "--config", str(ini), "--out-dir", str(tmp_path / "data"),
                     "--weather", str(tmp_path / "raw/weather.csv"), "--scint", str(tmp_path / "raw/scint.csv")]) == 0
    runs = [("a", 1), ("b", 1), ("c", 3)]
    for name, workers in runs:
        for command, extra in (("qkd", []), ("train", ["--dataset", str(tmp_path / "data/aligned.csv")])):
            out = tmp_path / f"{command}_{name}"
            assert cli_main([command, "--config", str(ini), "--out-dir", str(out),
                             "--workers", str(workers), *extra]) == 0
    for command in ("qkd", "train"):
        ref = _tree(tmp_path / f"{command}_a")
        assert len(ref) > 2
        for name, _ in runs[1:]:
            assert _tree(tmp_path / f"{command}_{name}") == ref, (command, name)
