"""End-to-end acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (see the ``acceptance criteria``
section of the pytest terminal summary).
"""

import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import record
from scorelab import analysis, experiments
from scorelab import rng as rngmod
from scorelab.models import TimeMlp
from scorelab.sample import SamplerConfig, best_subset, reverse_sample
from scorelab.schedule import make_schedule, noise_dataset
from scorelab.targets import GaussianTarget, GmmTarget, ScoreOracle, random_spd, sample_target


def test_1_tweedie_regression():
    start = time.perf_counter()
    sigma = random_spd(2, np.random.default_rng(2024))
    err = experiments.tweedie_regression_error(GaussianTarget(sigma), 0.5, 100_000, 0)
    elapsed = time.perf_counter() - start
    ok = err < 0.05 and elapsed < 10
    record(1, ok, f"Tweedie least-squares Frobenius error {err:.4f} < 0.05 ({elapsed:.1f}s)")
    assert ok


def test_2_martingale_identity():
    start = time.perf_counter()
    gaps = []
    for q in range(20):
        target = GaussianTarget(random_spd(3, np.random.default_rng(q)))
        oracle = ScoreOracle(target)
        sched = make_schedule("linear", 20, 5.0)
        ds = noise_dataset(sample_target(target, 10, q), sched, q)
        f = experiments.random_linear_model(oracle, sched, np.random.default_rng(1000 + q))
        gaps.append(analysis.martingale_decompose(ds, f, oracle).rel_gap)
    elapsed = time.perf_counter() - start
    ok = max(gaps) < 1e-8 and elapsed < 5
    record(2, ok, f"max |H - sum R| / (|H| + 1e-12) = {max(gaps):.2e} < 1e-8 over 20 models ({elapsed:.1f}s)")
    assert ok


def test_3_excess_risk_inequality():
    # Pool: true score plus three time-constant perturbations -Sigma_t^{-1} + E,
    # E_ab ~ N(0, 0.01^2), on a fresh d=2 Gaussian problem per seed (m=1000, N=20, T=5).
    start = time.perf_counter()
    stated, derived, picked = [], [], 0
    for seed in range(20):
        target = experiments.build_target({"kind": "gaussian", "d": 2, "covariance": "random-spd"}, seed)
        oracle = ScoreOracle(target)
        sched = make_schedule("linear", 20, 5.0)
        ds = noise_dataset(sample_target(target, 1000, seed), sched, seed)
        pool = experiments.perturbed_pool(oracle, sched, rngmod.stream(seed, "misc", 3), 0.01)
        rep = analysis.excess_risk_check(ds, pool, oracle)
        stated.append(rep.holds_stated)
        derived.append(rep.holds_derived)
        picked += rep.chosen != 0
    elapsed = time.perf_counter() - start
    ok = all(stated) and elapsed < 30
    record(
        3,
        ok,
        f"L <= H on {sum(stated)}/20 seeds (L <= 2H on {sum(derived)}/20; "
        f"non-oracle minimizer on {picked}/20) ({elapsed:.1f}s)",
    )
    assert ok


def test_4_bootstrap_unbiased_and_variance_order():
    start = time.perf_counter()
    oracle = ScoreOracle(GaussianTarget(np.eye(2)))
    rows, bsm_slope, dsm_slope = analysis.variance_rate_sweep(oracle, 1.0, [0.2, 0.1, 0.05], 100_000, 0)
    worst_z = max(float(np.max(np.abs(r["mean_bsm"]) / r["se_bsm"])) for r in rows)
    elapsed = time.perf_counter() - start
    ok = worst_z < 4 and abs(bsm_slope - 1) <= 0.25 and abs(dsm_slope) <= 0.25 and elapsed < 60
    record(
        4,
        ok,
        f"max |mean|/SE {worst_z:.2f} < 4; BSM slope {bsm_slope:.3f} (1 +- 0.25), "
        f"DSM slope {dsm_slope:.3f} (0 +- 0.25) ({elapsed:.1f}s)",
    )
    assert ok


def test_5_second_order_tweedie():
    start = time.perf_counter()
    oracle = ScoreOracle(GaussianTarget(np.eye(1)))
    rows = analysis.second_order_check(oracle, 1.0, 0.8, [-1.0, 0.0, 1.0], 0.1, 1_000_000, 0)
    zs = [r["max_z"] for r in rows]
    elapsed = time.perf_counter() - start
    ok = max(zs) < 3 and elapsed < 60
    record(5, ok, f"|MC - closed form| / SE at 3 bins = {', '.join(f'{z:.2f}' for z in zs)} < 3 ({elapsed:.1f}s)")
    assert ok


def test_6_gmm_sampling():
    start = time.perf_counter()
    target = GmmTarget([[5.0], [-5.0]], [1.0, 1.0], [0.7, 0.3])
    x = reverse_sample(ScoreOracle(target), SamplerConfig(make_schedule("linear", 1000, 5.0), n=10_000, seed=0))
    w = analysis.mode_weights(x, target.means)
    elapsed = time.perf_counter() - start
    ok = abs(w[0] - 0.7) <= 0.05 and abs(w[1] - 0.3) <= 0.05 and elapsed < 120
    record(6, ok, f"mode weights ({w[0]:.3f}, {w[1]:.3f}) within 0.05 of (0.7, 0.3) ({elapsed:.1f}s)")
    assert ok


def test_7_bsm_beats_dsm_on_gaussian_linear(tmp_path):
    start = time.perf_counter()
    cfg, errors = experiments.validate_config(experiments.load_preset("gaussian-linear"))
    assert not errors
    summary = experiments.run_experiment(cfg, str(tmp_path))
    elapsed = time.perf_counter() - start
    fracs = [s["late_fraction_bsm_le_dsm"] for s in summary["per_seed"].values()]
    wins = summary["seeds_late_mean_smaller"]
    ok = min(fracs) >= 0.8 and wins >= 4 and elapsed < 300
    record(
        7,
        ok,
        f"BSM <= DSM on >= {min(fracs):.1%} of late steps per seed (>= 80%); "
        f"late mean smaller on {wins}/5 seeds ({elapsed:.0f}s)",
    )
    assert ok


def test_8_fast_inference_pigeonhole():
    start = time.perf_counter()
    gen = np.random.default_rng(8)
    failures = 0
    for case in range(1000):
        n = int(gen.integers(1, 200))
        e = gen.exponential(size=n) * gen.choice([0.0, 1.0, 1e6], size=n)
        k = int(gen.integers(1, n + 1))
        delta = float(gen.uniform(1e-3, 1.0))
        i, ok = best_subset(e, [delta] * n, k)
        failures += not ok
        if case % 20 == 0:
            # independent recomputation straight from Fraction(float)
            w = Fraction(delta)
            sums = [sum(k * w * Fraction(v) for v in e[r::k]) for r in range(k)]
            failures += sums[i - 1] != min(sums) or min(sums) > sum(w * Fraction(v) for v in e)
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 1
    record(8, ok, f"{failures} pigeonhole failures over 1000 exact-arithmetic cases ({elapsed:.2f}s)")
    assert ok


@pytest.mark.slow
def test_9_dimension_sweep(tmp_path):
    start = time.perf_counter()
    cfg, errors = experiments.validate_config(experiments.load_preset("dimension-sweep"))
    assert not errors
    summary = experiments.run_experiment(cfg, str(tmp_path))
    elapsed = time.perf_counter() - start
    slope = summary["loglog_slope"]
    ok = abs(slope) < 0.3 and elapsed < 900
    record(9, ok, f"|log-log slope| of scaled error vs d = {abs(slope):.3f} < 0.3 ({elapsed:.0f}s)")
    assert ok


def test_10_mlp_gradient_check():
    start = time.perf_counter()
    sched = make_schedule("linear", 50, 5.0)
    worst = 1.0
    for run in range(20):
        gen = np.random.default_rng(run)
        d = int(gen.integers(1, 6))
        net = TimeMlp.initialized([d + 1, int(gen.integers(4, 33)), d], sched, run, ["tanh", "relu"][run % 2])
        t = sched.times[gen.integers(0, sched.n, 64)]
        x, y = gen.standard_normal((64, d)), gen.standard_normal((64, d))
        _, grad = net.loss_grad(t, x, y)
        coords = gen.choice(net.n_params, min(25, net.n_params), replace=False)
        good = 0
        for c in coords:
            th = net.theta.copy()
            th[c] += 1e-5
            up, _ = net.loss_grad(t, x, y, th)
            th[c] -= 2e-5
            dn, _ = net.loss_grad(t, x, y, th)
            fd = (up - dn) / 2e-5
            good += abs(fd - grad[c]) / max(abs(fd), abs(grad[c]), 1e-8) < 1e-4
        worst = min(worst, good / len(coords))
    elapsed = time.perf_counter() - start
    ok = worst >= 0.99 and elapsed < 5
    record(10, ok, f"worst per-run fraction of coordinates with rel. error < 1e-4: {worst:.2f} >= 0.99 ({elapsed:.1f}s)")
    assert ok


def test_11_kappa():
    start = time.perf_counter()
    oracle = ScoreOracle(GaussianTarget(np.array([[1.5]])))
    sched = make_schedule("linear", 10, 1.0)
    f = experiments.random_linear_model(oracle, sched, np.random.default_rng(11), bias=0.0)
    kappas = [analysis.kappa_estimate(f, oracle, t, 200_000, j) for j, t in enumerate(sched.times)]
    elapsed = time.perf_counter() - start
    err = max(abs(k - 3**0.25) for k in kappas)
    ok = err < 0.05 and min(kappas) >= 1 and elapsed < 10
    record(11, ok, f"max |kappa - 3^(1/4)| = {err:.4f} < 0.05 over {len(kappas)} times, min kappa {min(kappas):.3f} ({elapsed:.1f}s)")
    assert ok
