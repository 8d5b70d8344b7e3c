import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from conftest import spd
from scorelab import io
from scorelab.analysis import (
    ErrorReport,
    cross_term,
    empirical_l2,
    excess_risk_check,
    expected_l2,
    kappa_estimate,
    kappa_ratio,
    loglog_slope,
    martingale_decompose,
    martingale_spot_check,
    mode_weights,
    scaled_error,
    second_order_check,
    time_regularity_check,
    variance_rate_sweep,
)
from scorelab.errors import UndefinedRatioError
from scorelab.models import LinearScoreModel
from scorelab.schedule import make_schedule, noise_dataset
from scorelab.targets import GaussianTarget, GmmTarget, ScoreOracle, sample_target


def setup(m, n, horizon=2.0, seed=0, d=2):
    g = np.random.default_rng(seed)
    o = ScoreOracle(GaussianTarget(spd(d, g)))
    sched = make_schedule("linear", n, horizon)
    return o, sched, noise_dataset(sample_target(o.target, m, seed), sched, seed)


def perturbed(o, sched, g, scale=0.5):
    d = o.d
    A = np.stack([-o.precision(t) + scale * g.standard_normal((d, d)) for t in sched.times])
    return LinearScoreModel(sched, A, 0.1 * g.standard_normal((sched.n, d)))


# -- L2 errors ---------------------------------------------------------------------------


def test_oracle_has_zero_error():
    o, sched, ds = setup(50, 5)
    assert empirical_l2(o, o, ds).total == 0.0
    rep = expected_l2(o, o, sched, 100, 0)
    assert rep.total == 0.0 and rep.total_stderr == 0.0


def test_zero_model_matches_resummation():
    o, sched, ds = setup(20, 4)
    rep = empirical_l2(LinearScoreModel(sched, d=2), o, ds)
    total = 0.0
    for j, t in enumerate(sched.times):
        prec = o.precision(t)
        for i in range(ds.m):
            total += sched.weights[j] * float(np.sum((prec @ ds.x[i, j]) ** 2)) / ds.m
    assert_allclose(rep.total, total, rtol=1e-12)


def test_total_is_linear_and_additive(rng):
    o, sched, ds = setup(30, 6)
    rep = empirical_l2(perturbed(o, sched, rng), o, ds)
    scaled = ErrorReport(rep.times, 3.0 * rep.weights, rep.errors)
    assert_allclose(scaled.total, 3.0 * rep.total, rtol=1e-14)
    assert_allclose(rep.subset_total([0, 2, 4]) + rep.subset_total([1, 3, 5]), rep.total, rtol=1e-14)
    assert_allclose(rep.total, np.sum(rep.weights * rep.errors), rtol=1e-12)


def test_expected_error_matches_gaussian_quadratic_form(rng):
    o, sched, _ = setup(1, 4)
    E = 0.3 * rng.standard_normal((sched.n, 2, 2))
    model = LinearScoreModel(sched, np.stack([-o.precision(t) + E[j] for j, t in enumerate(sched.times)]))
    rep = expected_l2(model, o, sched, 20_000, 3)
    for j, t in enumerate(sched.times):
        exact = np.trace(E[j] @ o.noised_covariance(t) @ E[j].T)
        assert abs(rep.errors[j] - exact) < 3 * rep.stderr[j]
        assert_allclose(rep.weighted[j], sched.weights[j] * rep.errors[j])


def test_stderr_scales_with_sample_size(rng):
    o, sched, _ = setup(1, 2)
    model = perturbed(o, sched, rng)
    a = expected_l2(model, o, sched, 20_000, 1)
    b = expected_l2(model, o, sched, 40_000, 1)
    assert_allclose(a.stderr / b.stderr, math.sqrt(2), rtol=0.1)


def test_report_csv_and_summary(tmp_path, rng):
    o, sched, ds = setup(10, 3)
    rep = empirical_l2(perturbed(o, sched, rng), o, ds)
    rep.write_csv(tmp_path / "r.csv")
    header, rows = io.read_csv(tmp_path / "r.csv")
    assert header == ErrorReport.HEADER and len(rows) == 3
    assert float(rows[1][3]) == rep.errors[1]
    assert rep.summary()["n_timesteps"] == 3


# -- martingale decomposition ---------------------------------------------------------------


def test_oracle_ledger_is_all_zero():
    o, _, ds = setup(10, 5)
    led = martingale_decompose(ds, o, o)
    assert np.all(led.zeta == 0) and np.all(led.R == 0)
    assert led.H_direct == 0.0 and led.H_sum == 0.0


@settings(max_examples=15)
@given(seed=st.integers(0, 10_000), m=st.integers(1, 50), n=st.integers(1, 50))
def test_increments_sum_to_cross_term(seed, m, n):
    g = np.random.default_rng(seed)
    o, sched, ds = setup(m, n, horizon=g.uniform(0.5, 5.0), seed=seed)
    led = martingale_decompose(ds, perturbed(o, sched, g), o)
    assert led.rel_gap < 1e-8
    assert np.all(led.G[:, 1] == 0) and np.all(led.R[:, 0] == 0)


def test_direct_path_is_independent_of_ledger(rng):
    o, sched, ds = setup(10, 20)
    f = perturbed(o, sched, rng)
    h = 0.0
    for j, t in enumerate(sched.times):
        for i in range(ds.m):
            x = ds.x[i, j]
            s = o.score(t, x)
            y = -(x - math.exp(-t) * ds.x0[i]) / sched.sigma_sqs[j]
            h += sched.weights[j] / ds.m * float((f(t, x) - s) @ (y - s))
    assert_allclose(cross_term(f, o, ds), h, rtol=1e-12)


@pytest.mark.parametrize("k", [1, 10, 20])
def test_increments_have_conditional_mean_zero(k, rng):
    o, sched, ds = setup(10, 20)
    mean, se = martingale_spot_check(ds, perturbed(o, sched, rng), o, 3, k, 1000, 7)
    assert se > 0
    assert abs(mean) < 4 * se


# -- excess risk -------------------------------------------------------------------------------


def test_singleton_oracle_pool():
    o, _, ds = setup(100, 5)
    rep = excess_risk_check(ds, [o], o)
    assert rep.chosen == 0 and rep.L == 0.0 and rep.H == 0.0 and rep.holds_stated


def test_pool_without_oracle_is_skipped(rng):
    o, sched, ds = setup(50, 5)
    with pytest.warns(UserWarning, match="skipped"):
        rep = excess_risk_check(ds, [perturbed(o, sched, rng)], o)
    assert rep.skipped and rep.holds_stated


def test_loss_gap_identity(rng):
    # Lhat(f) - Lhat(s) = L(f) - 2 H(f), exactly
    from scorelab.analysis import weighted_dsm_loss

    o, sched, ds = setup(40, 8)
    f = perturbed(o, sched, rng)
    lhs = weighted_dsm_loss(f, ds) - weighted_dsm_loss(o, ds)
    rhs = empirical_l2(f, o, ds).total - 2 * cross_term(f, o, ds)
    assert_allclose(lhs, rhs, rtol=1e-10)


def test_erm_satisfies_factor_two_bound(rng):
    o, sched, ds = setup(1000, 10)
    pool = [o] + [perturbed(o, sched, rng, 0.01) for _ in range(3)]
    assert excess_risk_check(ds, pool, o).holds_derived


# -- kappa and time regularity --------------------------------------------------------------


def test_gaussian_error_kappa():
    o = ScoreOracle(GaussianTarget(np.array([[2.0]])))
    sched = make_schedule("linear", 1, 0.5)
    model = LinearScoreModel(sched, np.stack([-o.precision(0.5) + 0.4]))
    assert abs(kappa_estimate(model, o, 0.5, 200_000, 0) - 3**0.25) < 0.05


def test_kappa_undefined_for_oracle():
    o = ScoreOracle(GaussianTarget(np.eye(2)))
    with pytest.raises(UndefinedRatioError):
        kappa_estimate(o, o, 0.5, 100, 0)


@given(seed=st.integers(0, 10_000), c=st.floats(1e-3, 1e3))
def test_kappa_is_scale_free_and_at_least_one(seed, c):
    sq = np.random.default_rng(seed).exponential(size=50) ** 2
    k = kappa_ratio(sq)
    assert k >= 1.0 - 1e-12
    assert_allclose(kappa_ratio(c * c * sq), k, rtol=1e-12)


def test_time_regularity_zero_gap():
    o = ScoreOracle(GaussianTarget(np.eye(2)))
    assert time_regularity_check(o, o, 0.5, 0.5, 1000, 0.05, lipschitz=1.0) == 0.0


def test_time_regularity_holds_for_true_score():
    o = ScoreOracle(GaussianTarget(spd(2, np.random.default_rng(1))))
    n, delta = 10_000, 0.05
    frac = time_regularity_check(o, o, 0.6, 0.5, n, delta, seed=2)
    assert frac <= delta + 3 * math.sqrt(delta / n)


def test_time_regularity_catches_rough_function():
    o = ScoreOracle(GaussianTarget(np.eye(2)))

    def rough(t, x):
        return 20.0 * np.sign(math.sin(40.0 * t)) * np.sign(x)

    assert time_regularity_check(rough, o, 0.6, 0.5, 2000, 0.05, seed=1) > 0.9


# -- variance rates and moments ---------------------------------------------------------------


def test_full_gap_makes_bootstrap_equal_dsm():
    o = ScoreOracle(GaussianTarget(np.eye(2)))
    rows, _, _ = variance_rate_sweep(o, 1.0, [1.0, 0.5], 2000, 0)
    assert rows[0]["alpha"] == 0.0
    assert rows[0]["trace_bsm"] == rows[0]["trace_dsm"]


def test_bootstrap_variance_shrinks_with_step():
    o = ScoreOracle(GaussianTarget(np.eye(2)))
    rows, bsm, dsm = variance_rate_sweep(o, 1.0, [0.4, 0.2, 0.1], 20_000, 1)
    traces = [r["trace_bsm"] for r in rows]
    assert traces[0] > traces[1] > traces[2]
    assert bsm > 0.5 and abs(dsm) < 0.25


def test_dsm_residual_variance_at_origin():
    # standard normal data: Cov(z_t | x_t) = sigma^2 - sigma^4 for every x_t
    o = ScoreOracle(GaussianTarget(np.eye(1)))
    t = 1.0
    s2 = 1 - math.exp(-2 * t)
    assert_allclose(o.conditional_noise_covariance(t, 0.0, np.zeros(1)), [[s2 - s2 * s2]], rtol=1e-12)
    row = second_order_check(o, t, 0.0, [0.0], 0.05, 400_000, 3)[0]
    assert row["max_z"] < 3


def test_loglog_slope_examples():
    xs = np.array([1.0, 2.0, 4.0, 8.0])
    assert_allclose(loglog_slope(xs, 3 * xs), 1.0)
    assert_allclose(loglog_slope(xs, np.full(4, 2.0)), 0.0, atol=1e-12)
    noisy = xs**2 * (1 + 0.01 * np.random.default_rng(0).standard_normal(4))
    assert abs(loglog_slope(xs, noisy) - 2) < 0.05
    with pytest.raises(ValueError):
        loglog_slope(xs, [1.0, 0.0, 1.0, 1.0])


def test_mode_weight_examples():
    means = [[5.0], [-5.0]]
    assert_allclose(mode_weights(np.full(10, 5.0), means), [1.0, 0.0])
    assert_allclose(mode_weights(np.random.default_rng(0).normal(size=7), [[0.0]]), [1.0])
    x = sample_target(GmmTarget(means, [1.0, 1.0], [0.7, 0.3]), 10_000, 2)
    assert_allclose(mode_weights(x, means), [0.7, 0.3], atol=0.02)


def test_scaled_error_needs_three_dims():
    with pytest.raises(ValueError):
        scaled_error(1.0, 10, 2)
    assert_allclose(scaled_error(2.0, 4, 8), 2.0 / (4 * math.log(math.log(8))))
