"""Score-error metrics and identity checks.

Notation: ``s`` is the true score, ``f`` a fitted one, ``gamma_j`` the step
weights and ``y = -z / sigma^2`` the DSM target.  For a dataset of ``m``
trajectories,

* ``L(f) = sum_j gamma_j / m sum_i ||f - s||^2`` (empirical L2 error),
* ``H(f) = sum_j gamma_j / m sum_i <f - s, y - s>`` (cross term).

The weighted DSM loss satisfies ``Lhat(f) - Lhat(s) = L(f) - 2 H(f)``, which is
what :func:`excess_risk_check` measures.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from scorelab import io
from scorelab.errors import UndefinedRatioError
from scorelab.schedule import sigma_sq
from scorelab.train import alpha as bootstrap_alpha


def sub_seed(seed, *keys):
    """Deterministic child seed for (seed, keys)."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1, np.uint64)[0])


# -- error reports ------------------------------------------------------------


@dataclass
class ErrorReport:
    """Per-timestep mean squared score errors ``e_j`` and weights ``gamma_j``."""

    times: np.ndarray
    weights: np.ndarray
    errors: np.ndarray
    stderr: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def weighted(self):
        return self.weights * self.errors

    @property
    def total(self):
        return float(np.sum(self.weighted))

    @property
    def total_stderr(self):
        if self.stderr is None:
            return 0.0
        return float(np.sqrt(np.sum((self.weights * self.stderr) ** 2)))

    def subset_total(self, idx):
        return float(np.sum(self.weighted[np.asarray(idx)]))

    def rows(self):
        se = np.zeros_like(self.errors) if self.stderr is None else self.stderr
        return [
            [j + 1, t, w, e, s, w * e]
            for j, (t, w, e, s) in enumerate(zip(self.times, self.weights, self.errors, se))
        ]

    HEADER = ["timestep", "t", "weight", "value", "stderr", "weighted"]

    def write_csv(self, path):
        io.write_csv(path, self.HEADER, self.rows())

    def summary(self):
        return {"total": self.total, "total_stderr": self.total_stderr, "n_timesteps": int(self.times.size), **self.meta}


def empirical_l2(model, oracle, dataset):
    """``e_j = (1/m) sum_i ||f(t_j, x_ij) - s(t_j, x_ij)||^2`` over the dataset."""
    sched = dataset.schedule
    errs = np.empty(sched.n)
    for j, t in enumerate(sched.times):
        x = dataset.x[:, j]
        r = model(t, x) - oracle.score(t, x)
        errs[j] = np.mean(np.sum(r * r, axis=1))
    return ErrorReport(sched.times, sched.weights, errs, meta={"kind": "empirical", "m": dataset.m})


def expected_l2(model, oracle, schedule, n_mc, seed):
    """Monte Carlo estimate of ``E ||f - s||^2`` under ``p_{t_j}`` with standard errors."""
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    errs = np.empty(schedule.n)
    se = np.empty(schedule.n)
    for j, t in enumerate(schedule.times):
        x = oracle.sample_marginal(t, n_mc, sub_seed(seed, j))
        r = model(t, x) - oracle.score(t, x)
        sq = np.sum(r * r, axis=1)
        errs[j] = sq.mean()
        se[j] = sq.std(ddof=1) / math.sqrt(n_mc) if n_mc > 1 else 0.0
    return ErrorReport(schedule.times, schedule.weights, errs, se, {"kind": "expected", "n_mc": n_mc})


def linear_oracle_error(model, oracle):
    """Frobenius distance ``||A_j - (-Sigma_{t_j}^{-1})||`` per timestep (Gaussian targets)."""
    return np.array(
        [np.linalg.norm(model.A[j] + oracle.precision(t)) for j, t in enumerate(model.schedule.times)]
    )


# -- martingale decomposition ----------------------------------------------------


@dataclass
class MartingaleLedger:
    """``zeta = (s - f) / m``, partial sums ``G`` and increments ``R`` (1-based ``k`` in columns)."""

    zeta: np.ndarray  # (m, N, d)
    G: np.ndarray  # (m, N + 1, d); G[:, k] is G_{i,k}, G[:, 0] unused
    Gbar: np.ndarray  # (m, d)
    R: np.ndarray  # (m, N + 1); R[:, 0] = 0
    H_direct: float
    H_sum: float

    @property
    def rel_gap(self):
        return abs(self.H_direct - self.H_sum) / (abs(self.H_direct) + 1e-12)


def cross_term(model, oracle, dataset):
    """``H(f)`` straight from its definition with per-sample DSM targets."""
    sched = dataset.schedule
    total = 0.0
    for j, t in enumerate(sched.times):
        x = dataset.x[:, j]
        s = oracle.score(t, x)
        y = -(x - math.exp(-t) * dataset.x0) / sched.sigma_sqs[j]
        total += sched.weights[j] * np.sum((model(t, x) - s) * (y - s)) / dataset.m
    return float(total)


def _zeta(model, oracle, dataset):
    m, n, d = dataset.x.shape
    zeta = np.empty((m, n, d))
    for j, t in enumerate(dataset.schedule.times):
        x = dataset.x[:, j]
        zeta[:, j] = (oracle.score(t, x) - model(t, x)) / m
    return zeta


def _increments(zeta, oracle, times, weights, x, x0):
    """``R_{i,k}`` from posterior means along one set of trajectories.

    The filtration reveals ``x_{t_N}, x_{t_{N-1}}, ..., x_{t_1}`` and finally
    ``x_0``.  For ``k < N``, ``R_{i,k} = <G_{i,k+1}, E[x_0|x_{t_{N-k+1}}] - E[x_0|x_{t_{N-k}}]>``;
    ``R_{i,N} = <Gbar_i, z_{t_1} - E[z_{t_1}|x_{t_1}]>``.
    """
    m, n, d = zeta.shape
    sig2 = sigma_sq(times)
    c = (weights * np.exp(-times) / sig2)[None, :, None] * zeta  # c_j
    G = np.zeros((m, n + 1, d))
    # G_{i,k} = sum_{j=N-k+2}^{N} c_j (1-based j)
    for k in range(2, n + 1):
        G[:, k] = G[:, k - 1] + c[:, n - k + 1]
    Gbar = np.sum((weights * np.exp(-(times - times[0])) / sig2)[None, :, None] * zeta, axis=1)
    post = np.stack([oracle.posterior_mean_x0(t, x[:, j]) for j, t in enumerate(times)], axis=1)
    R = np.zeros((m, n + 1))
    for k in range(1, n):
        # 0-based indices of t_{N-k+1} and t_{N-k}
        hi, lo = n - k, n - k - 1
        R[:, k] = np.sum(G[:, k + 1] * (post[:, hi] - post[:, lo]), axis=1)
    z1 = x[:, 0] - math.exp(-times[0]) * x0
    z1_mean = x[:, 0] - math.exp(-times[0]) * post[:, 0]
    R[:, n] = np.sum(Gbar * (z1 - z1_mean), axis=1)
    return G, Gbar, R


def martingale_decompose(dataset, model, oracle):
    """Compute ``H(f)`` twice: directly, and as the sum of martingale increments."""
    sched = dataset.schedule
    zeta = _zeta(model, oracle, dataset)
    G, Gbar, R = _increments(zeta, oracle, sched.times, sched.weights, dataset.x, dataset.x0)
    return MartingaleLedger(zeta, G, Gbar, R, cross_term(model, oracle, dataset), float(np.sum(R)))


def martingale_spot_check(dataset, model, oracle, i, k, n_regen, seed):
    """Mean and standard error of ``R_{i,k}`` over fresh draws of its newest variable.

    Holding the revealed prefix of trajectory ``i`` fixed, the newest
    variable (``x_{t_{N-k}}`` for ``k < N``, ``x_0`` for ``k = N``) is redrawn
    from its exact backward conditional.  A martingale difference has mean 0.
    """
    sched = dataset.schedule
    n = sched.n
    if not 1 <= k <= n:
        raise ValueError("k must lie in [1, N]")
    gen = np.random.default_rng(sub_seed(seed, i, k))
    x = np.repeat(dataset.x[i : i + 1], n_regen, axis=0)
    x0 = np.repeat(dataset.x0[i : i + 1], n_regen, axis=0)
    if k < n:
        lo = n - k - 1
        x[:, lo] = oracle.sample_backward(sched.times[lo], sched.times[lo + 1], x[:, lo + 1], gen)
    else:
        x0 = oracle.sample_backward(0.0, sched.times[0], x[:, 0], gen)
    m = dataset.m
    zeta = np.empty_like(x)
    for j, t in enumerate(sched.times):
        zeta[:, j] = (oracle.score(t, x[:, j]) - model(t, x[:, j])) / m
    _, _, R = _increments(zeta, oracle, sched.times, sched.weights, x, x0)
    r = R[:, k]
    return float(r.mean()), float(r.std(ddof=1) / math.sqrt(n_regen))


# -- excess risk -------------------------------------------------------------------


@dataclass
class ExcessRiskReport:
    chosen: int
    losses: list
    L: float
    H: float
    skipped: bool = False

    @property
    def holds_stated(self):
        """``L <= H``."""
        return self.skipped or self.L <= self.H

    @property
    def holds_derived(self):
        """``L <= 2 H``, the bound implied by ``Lhat(fhat) <= Lhat(s)``."""
        return self.skipped or self.L <= 2.0 * self.H

    @property
    def slack(self):
        return self.H - self.L


def weighted_dsm_loss(model, dataset):
    """``sum_j gamma_j / m sum_i ||f(t_j, x_ij) - y_ij||^2``."""
    sched = dataset.schedule
    total = 0.0
    for j, t in enumerate(sched.times):
        r = model(t, dataset.x[:, j]) - dataset.dsm_target(j)
        total += sched.weights[j] * np.sum(r * r) / dataset.m
    return float(total)


def excess_risk_check(dataset, model_pool, oracle):
    """Pick the DSM empirical risk minimizer from ``model_pool`` and compare ``L`` with ``H``.

    The comparison is only meaningful when the true score is in the pool;
    otherwise a warning is issued and the report is marked skipped.
    """
    losses = [weighted_dsm_loss(f, dataset) for f in model_pool]
    chosen = int(np.argmin(losses))
    if not any(f is oracle for f in model_pool):
        warnings.warn("true score is not in the model pool; excess-risk check skipped", stacklevel=2)
        return ExcessRiskReport(chosen, losses, float("nan"), float("nan"), skipped=True)
    f = model_pool[chosen]
    L = float(empirical_l2(f, oracle, dataset).total)
    return ExcessRiskReport(chosen, losses, L, cross_term(f, oracle, dataset))


# -- kappa, time regularity -----------------------------------------------------------


def kappa_ratio(sq_errors):
    """``E[e^2]^{1/4} / E[e]^{1/2}`` for squared errors ``e = ||f - s||^2``."""
    sq = np.asarray(sq_errors, dtype=float)
    second = sq.mean()
    if second == 0:
        raise UndefinedRatioError("score error is identically zero; kappa is undefined")
    kappa = float(np.mean(sq * sq) ** 0.25 / math.sqrt(second))
    # power-mean inequality; tolerance covers rounding only
    assert kappa >= 1.0 - 1e-12, kappa
    return kappa


def kappa_estimate(model, oracle, t, n_mc, seed):
    """Monte Carlo hypercontractivity ratio of the score error at time ``t``."""
    x = oracle.sample_marginal(t, n_mc, seed)
    r = model(t, x) - oracle.score(t, x)
    return kappa_ratio(np.sum(r * r, axis=1))


def time_regularity_bound(t, t_prev, lipschitz, d, delta):
    gap = t - t_prev
    return math.exp(gap) * lipschitz * math.sqrt(8.0 * d * gap * math.log(2.0 / delta))


def time_regularity_check(f, oracle, t, t_prev, n_mc, delta, lipschitz=None, seed=0):
    """Fraction of ``x ~ p_t`` with ``||e^{-(t-t')} f(t, x) - f(t', e^{t-t'} x)||`` above the bound.

    ``lipschitz`` defaults to the exact constant of the true score over
    ``{t', t}`` (Gaussian targets).
    """
    if t < t_prev:
        raise ValueError("need t >= t_prev")
    if lipschitz is None:
        lipschitz = oracle.schedule_lipschitz([t_prev, t])
    gap = t - t_prev
    x = oracle.sample_marginal(t, n_mc, seed)
    lhs = np.linalg.norm(math.exp(-gap) * f(t, x) - f(t_prev, math.exp(gap) * x), axis=1)
    bound = time_regularity_bound(t, t_prev, lipschitz, oracle.d, delta)
    return float(np.mean(lhs > bound))


# -- variance rates -------------------------------------------------------------------


def bootstrap_residuals(oracle, t, gap, n_mc, seed, mode="lemma"):
    """DSM and bootstrapped residuals at ``t`` with the true score at ``t - gap``.

    Returns ``(r_dsm, r_bsm, alpha)``; each residual is ``target - s(t, x_t)``.
    """
    t_prev = t - gap
    x0 = oracle.sample_marginal(0.0, n_mc, seed)
    gen = np.random.default_rng(sub_seed(seed, 1))
    w1 = gen.standard_normal(x0.shape)
    w2 = gen.standard_normal(x0.shape)
    x_prev = math.exp(-t_prev) * x0 + math.sqrt(sigma_sq(t_prev)) * w1
    x_t = math.exp(-gap) * x_prev + math.sqrt(sigma_sq(gap)) * w2
    s_t = oracle.score(t, x_t)
    y = -(x_t - math.exp(-t) * x0) / sigma_sq(t)
    r_dsm = y - s_t
    a = bootstrap_alpha(t_prev, t, mode)
    if a == 0:
        return r_dsm, r_dsm.copy(), a
    y_prev = -(x_prev - math.exp(-t_prev) * x0) / sigma_sq(t_prev)
    r_bsm = r_dsm + a * (oracle.score(t_prev, x_prev) - y_prev)
    return r_dsm, r_bsm, a


def loglog_slope(xs, ys):
    """Least-squares slope of ``log ys`` against ``log xs``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("log-log slope needs positive values")
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def variance_rate_sweep(oracle, t, deltas, n_mc, seed, mode="lemma"):
    """Trace covariance of DSM and bootstrapped residuals for each step size.

    Returns ``(rows, bsm_slope, dsm_slope)``; each row holds the step, alpha,
    both trace covariances and the bootstrapped residual mean with its
    per-coordinate standard error.
    """
    rows = []
    for q, gap in enumerate(deltas):
        if not 0 < gap <= t:
            raise ValueError("every step must satisfy 0 < delta <= t")
        r_dsm, r_bsm, a = bootstrap_residuals(oracle, t, gap, n_mc, sub_seed(seed, q), mode)
        rows.append(
            {
                "delta": float(gap),
                "alpha": a,
                "trace_dsm": float(np.trace(np.atleast_2d(np.cov(r_dsm.T)))),
                "trace_bsm": float(np.trace(np.atleast_2d(np.cov(r_bsm.T)))),
                "mean_bsm": r_bsm.mean(axis=0),
                "se_bsm": r_bsm.std(axis=0, ddof=1) / math.sqrt(n_mc),
            }
        )
    gaps = [r["delta"] for r in rows]
    return (
        rows,
        loglog_slope(gaps, [r["trace_bsm"] for r in rows]),
        loglog_slope(gaps, [r["trace_dsm"] for r in rows]),
    )


def second_order_check(oracle, t, t_prev, centers, half_width, n_mc, seed):
    """Compare binned MC moments of ``z z^T`` with the closed form, bin by bin.

    ``z = x_t - e^{-(t - t')} x_{t'}``.  Within each bin (``||x_t - c|| <=
    half_width``) the MC mean of ``z z^T`` is compared entrywise with the bin
    mean of :meth:`ScoreOracle.conditional_noise_covariance`.
    """
    gap = t - t_prev
    x_prev = oracle.sample_marginal(t_prev, n_mc, seed)
    w = np.random.default_rng(sub_seed(seed, 2)).standard_normal(x_prev.shape)
    z = math.sqrt(sigma_sq(gap)) * w
    x_t = math.exp(-gap) * x_prev + z
    zz = z[:, :, None] * z[:, None, :]
    rows = []
    for c in np.atleast_2d(np.asarray(centers, dtype=float).reshape(len(centers), -1)):
        inside = np.linalg.norm(x_t - c, axis=1) <= half_width
        k = int(inside.sum())
        if k < 2:
            raise ValueError(f"bin at {c} holds fewer than 2 draws")
        mc = zz[inside].mean(axis=0)
        se = zz[inside].std(axis=0, ddof=1) / math.sqrt(k)
        closed = oracle.conditional_noise_covariance(t, t_prev, x_t[inside]).mean(axis=0)
        rows.append({"center": c, "count": k, "mc": mc, "se": se, "closed": closed,
                     "max_z": float(np.max(np.abs(mc - closed) / se))})
    return rows


# -- misc ---------------------------------------------------------------------------------


def mode_weights(samples, means):
    """Fraction of samples whose nearest mean is each entry of ``means``."""
    samples = np.asarray(samples, dtype=float)
    means = np.asarray(means, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if means.ndim == 1:
        means = means[:, None]
    dist = np.sum((samples[:, None, :] - means[None, :, :]) ** 2, axis=-1)
    return np.bincount(np.argmin(dist, axis=1), minlength=len(means)) / samples.shape[0]


def scaled_error(error, n_params, d):
    """``error / (n_params * log log d)``; needs ``d >= 3`` so ``log log d > 0``."""
    if d < 3:
        raise ValueError("scaled error needs d >= 3")
    return error / (n_params * math.log(math.log(d)))
