"""Timestep grids and Markov-consistent OU trajectories.

``noise_dataset`` integrates the forward process exactly along each
trajectory::

    x_j = e^{-gamma_j} x_{j-1} + sqrt(1 - e^{-2 gamma_j}) w_j,   x_0 = data

so the noises ``z_j = x_j - e^{-t_j} x_0`` of one trajectory are correlated
across timesteps the same way the continuous process correlates them.
"""

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from scorelab import rng as rngmod
from scorelab.errors import ConfigError, OffGridError

QUADRATIC_START = 0.001


def sigma_sq(t):
    """``1 - e^{-2t}`` via ``expm1`` (accurate for tiny ``t``)."""
    return -np.expm1(-2.0 * np.asarray(t, dtype=float))


def sigma(t):
    """Marginal noise scale ``sqrt(1 - e^{-2t})`` of the OU process."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("sigma is defined for t >= 0")
    out = np.sqrt(sigma_sq(t))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class Schedule:
    """Grid ``t_1 < ... < t_N`` with step weights ``gamma_j``.

    For grids built by :func:`make_schedule`, ``gamma_j = t_j - t_{j-1}``
    with ``t_0 = 0``.  Subsampled grids carry their own (coarser) weights.
    """

    times: np.ndarray
    weights: np.ndarray
    kind: str = "linear"

    def __post_init__(self):
        t = np.array(self.times, dtype=float).reshape(-1)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if t.size < 1 or w.shape != t.shape:
            raise ConfigError("schedule needs matching nonempty times and weights")
        if t[0] <= 0 or np.any(np.diff(t) <= 0):
            raise ConfigError("schedule times must be positive and strictly increasing")
        if np.any(w <= 0):
            raise ConfigError("schedule weights must be positive")
        t.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "weights", w)

    @property
    def n(self):
        return self.times.size

    @property
    def horizon(self):
        return float(self.times[-1])

    @property
    def delta(self):
        """Uniform step of a linear grid."""
        if self.kind != "linear":
            raise ValueError(f"delta is only defined for linear schedules, not {self.kind!r}")
        return self.horizon / self.n

    @cached_property
    def sigmas(self):
        return np.sqrt(sigma_sq(self.times))

    @cached_property
    def sigma_sqs(self):
        return sigma_sq(self.times)

    def index(self, t):
        """Grid index of ``t`` (exact up to 1e-12 relative); raises :class:`OffGridError`."""
        t = float(t)
        j = int(np.searchsorted(self.times, t))
        for cand in (j - 1, j):
            if 0 <= cand < self.n and abs(self.times[cand] - t) <= 1e-12 * max(1.0, abs(t)):
                return cand
        raise OffGridError(f"t={t!r} is not on the schedule grid")

    def indices(self, t):
        """Vectorized :meth:`index`."""
        t = np.asarray(t, dtype=float)
        j = np.clip(np.searchsorted(self.times, t), 0, self.n - 1)
        jm = np.clip(j - 1, 0, self.n - 1)
        tol = 1e-12 * np.maximum(1.0, np.abs(t))
        use_prev = np.abs(self.times[jm] - t) <= np.abs(self.times[j] - t)
        best = np.where(use_prev, jm, j)
        if np.any(np.abs(self.times[best] - t) > tol):
            raise OffGridError("some times are not on the schedule grid")
        return best

    def to_dict(self):
        return {"kind": self.kind, "times": self.times.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, obj):
        if "times" in obj:
            return cls(obj["times"], obj["weights"], obj.get("kind", "linear"))
        return make_schedule(obj.get("kind", "linear"), obj["n"], obj["horizon"])

    def to_json(self):
        return json.dumps(self.to_dict())


def make_schedule(kind, n, horizon):
    """Build a linear (``t_j = j T / N``) or quadratic grid.

    The quadratic grid squares ``linspace(0.001, sqrt(T), N)``, so it starts
    at ``1e-6`` and ends at ``T``.
    """
    if n < 1:
        raise ConfigError("schedule needs N >= 1")
    if not horizon > 0:
        raise ConfigError("schedule horizon must be positive")
    if kind == "linear":
        times = np.arange(1, n + 1) * (horizon / n)
        times[-1] = horizon
    elif kind == "quadratic":
        root = np.sqrt(horizon)
        if n == 1:
            times = np.array([float(horizon)])
        else:
            if root <= QUADRATIC_START:
                raise ConfigError(f"quadratic schedule needs sqrt(T) > {QUADRATIC_START}")
            times = (QUADRATIC_START + np.arange(n) * ((root - QUADRATIC_START) / (n - 1))) ** 2
            times[-1] = horizon
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    weights = np.diff(times, prepend=0.0)
    return Schedule(times, weights, kind)


@dataclass(frozen=True, eq=False)
class NoisedDataset:
    """``m`` forward trajectories on a schedule.

    ``x[i, j]`` is trajectory ``i`` at ``t_j``; ``z`` (computed on demand)
    is ``x - e^{-t_j} x0``.  Use :meth:`z_at` to avoid materializing the full
    noise tensor for large datasets.
    """

    x0: np.ndarray
    x: np.ndarray
    schedule: Schedule
    seed: int
    dependent: bool = True
    _z: dict = field(default_factory=dict, init=False, repr=False)

    @property
    def m(self):
        return self.x.shape[0]

    @property
    def n(self):
        return self.x.shape[1]

    @property
    def d(self):
        return self.x.shape[2]

    def z_at(self, j):
        return self.x[:, j] - np.exp(-self.schedule.times[j]) * self.x0

    def dsm_target(self, j):
        """``-z_j / sigma_j^2``, the regression target of denoising score matching."""
        return -self.z_at(j) / self.schedule.sigma_sqs[j]

    @cached_property
    def z(self):
        decay = np.exp(-self.schedule.times)
        return self.x - decay[None, :, None] * self.x0[:, None, :]

    def head(self, m):
        """First ``m`` trajectories as a new dataset."""
        return NoisedDataset(self.x0[:m], self.x[:m], self.schedule, self.seed, self.dependent)


def noise_dataset(x0, schedule, seed, dependent=True, workers=None):
    """Run the OU forward process from each row of ``x0`` over ``schedule``.

    Args:
        x0: clean samples, shape ``(m, d)``.
        schedule: timestep grid; steps use ``t_j - t_{j-1}`` (not the weights).
        seed: root seed; trajectory ``i`` draws from block stream
            ``i // BLOCK`` (see :mod:`scorelab.rng`).
        dependent: if False, every timestep is re-noised independently from
            ``x0`` (ablation of the Markov structure).
        workers: threads used to draw noise blocks; output does not depend on it.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim != 2 or x0.shape[0] < 1:
        raise ValueError("x0 must be a nonempty (m, d) array")
    m, d = x0.shape
    n = schedule.n
    w = rngmod.blockwise(m, seed, "noise", lambda g, b: g.standard_normal((b, n, d)), workers)
    times = schedule.times
    x = np.empty((m, n, d))
    if dependent:
        steps = np.diff(times, prepend=0.0)
        decay = np.exp(-steps)
        scale = np.sqrt(sigma_sq(steps))
        prev = x0
        for j in range(n):
            prev = decay[j] * prev + scale[j] * w[:, j]
            x[:, j] = prev
    else:
        x[:] = np.exp(-times)[None, :, None] * x0[:, None, :] + schedule.sigmas[None, :, None] * w
    return NoisedDataset(x0, x, schedule, int(seed), dependent)
