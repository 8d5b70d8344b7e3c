"""Reverse-time sampling and coarse-grid (fast) inference.

The reverse process runs from ``N(0, I)`` at ``t_N`` down to ``t_1``.  Over a
step of length ``gamma_j`` ending at ``t_{j-1}`` the drift ``x + 2 s(t_j, x)``
is integrated either by Euler-Maruyama::

    x <- x + gamma (x + 2 s) + sqrt(2 gamma) xi

or with the linear part solved exactly (exponential integrator)::

    x <- e^gamma x + 2 (e^gamma - 1) s + sqrt(e^{2 gamma} - 1) xi
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from scorelab import rng as rngmod
from scorelab.errors import ConfigError, NumericError
from scorelab.schedule import Schedule

INTEGRATORS = ("exponential", "euler-maruyama")


@dataclass
class SamplerConfig:
    """Sampler settings.

    ``zero_noise`` suppresses the Brownian increments (deterministic run).
    """

    schedule: Schedule
    integrator: str = "exponential"
    n: int = 1000
    seed: int = 0
    dim: int = None
    zero_noise: bool = False

    def __post_init__(self):
        if self.integrator not in INTEGRATORS:
            raise ConfigError(f"integrator must be one of {INTEGRATORS}")
        if self.n < 1:
            raise ConfigError("need n >= 1 samples")


def _run_block(score_fn, config, block, rows, d):
    gen = rngmod.stream(config.seed, "sample", block)
    times, weights = config.schedule.times, config.schedule.weights
    x = gen.standard_normal((rngmod.BLOCK, d))[:rows]
    # step j moves from t_j back to t_{j-1}; sampling stops at t_1
    for j in range(times.size - 1, 0, -1):
        xi = gen.standard_normal((rngmod.BLOCK, d))[:rows]
        if config.zero_noise:
            xi[:] = 0.0
        g = weights[j]
        s = score_fn(times[j], x)
        if config.integrator == "euler-maruyama":
            x = x + g * (x + 2.0 * s) + np.sqrt(2.0 * g) * xi
        else:
            e = np.expm1(g)
            x = (1.0 + e) * x + 2.0 * e * s + np.sqrt(np.expm1(2.0 * g)) * xi
        if not np.all(np.isfinite(x)):
            raise NumericError("sampler state became non-finite", where=f"t={times[j - 1]!r}")
    return x


def reverse_sample(score_fn, config):
    """Draw ``config.n`` samples by integrating the reverse SDE.

    Chains are grouped into blocks of :data:`scorelab.rng.BLOCK`, each with
    its own stream, so sample ``i`` does not depend on ``n``.
    """
    d = config.dim if config.dim is not None else score_fn.d
    out = []
    for b in range(rngmod.n_blocks(config.n)):
        rows = min(rngmod.BLOCK, config.n - b * rngmod.BLOCK)
        out.append(_run_block(score_fn, config, b, rows, d))
    return np.concatenate(out, axis=0)


def subsample_schedule(schedule, k, i):
    """Keep ``t_j`` with ``j = i (mod k)`` (1-based ``j`` and ``i``), weights ``k * delta``."""
    if schedule.kind != "linear":
        raise ConfigError("subsampling needs a linear schedule")
    n = schedule.n
    if not 1 <= i <= k <= n:
        raise ConfigError(f"need 1 <= offset <= stride <= N, got offset={i}, stride={k}, N={n}")
    idx = np.arange(i - 1, n, k)
    return Schedule(schedule.times[idx], np.full(idx.size, k * schedule.delta), "subsampled")


def _dyadic_products(errors, weights):
    """Exact ``gamma_j * e_j`` as integer numerators over one power-of-two denominator."""
    nums, dens = [], []
    for e, w in zip(errors, weights):
        ne, de = float(e).as_integer_ratio()
        nw, dw = float(w).as_integer_ratio()
        nums.append(ne * nw)
        dens.append(de * dw)
    common = max(dens, default=1)
    # floats are dyadic, so every denominator divides the largest one
    return [n * (common // d) for n, d in zip(nums, dens)], common


def _subset_numerators(errors, weights, k):
    if any(float(v) < 0 for v in errors):
        raise ValueError("errors must be nonnegative")
    if not 1 <= k <= len(errors):
        raise ValueError("stride must satisfy 1 <= k <= N")
    nums, den = _dyadic_products(errors, weights)
    sums = [0] * k
    for j, v in enumerate(nums):
        sums[j % k] += k * v
    return sums, sum(nums), den


def subset_sums(errors, weights, k):
    """``[sum_{j in S_i} k * gamma_j * e_j for i = 1..k]`` in exact rationals."""
    sums, _, den = _subset_numerators(errors, weights, k)
    return [Fraction(v, den) for v in sums]


def best_subset(errors, weights, k):
    """Offset ``i*`` (1-based) minimizing the stride-``k`` weighted error.

    Returns ``(i*, bound_ok)`` where ``bound_ok`` records the exact check
    ``min_i sum_{S_i} k gamma_j e_j <= sum_j gamma_j e_j``.  The subset sums
    add to ``k`` times the total, so the minimum can never exceed it.
    """
    sums, total, _ = _subset_numerators(errors, weights, k)
    best = min(range(k), key=sums.__getitem__)
    return best + 1, sums[best] <= total
