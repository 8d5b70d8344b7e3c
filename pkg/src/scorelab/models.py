"""Score approximators ``f(t, x)``.

* :class:`LinearScoreModel`: one affine map per grid time, fitted exactly.
* :class:`TimeMlp`: a single network shared across all grid times, input
  ``[x, t / T]``, with a hand-written backward pass.
* :class:`PerTimestepModel`: a list of independent models, one per grid time.

All models are callables ``model(t, x) -> (n, d)`` and reject times that are
not on their schedule.
"""

import numpy as np
from scipy import linalg

from scorelab import io
from scorelab import rng as rngmod
from scorelab.errors import ConfigError, SingularDesignError
from scorelab.schedule import Schedule

MAX_CONDITION = 1e12


# -- linear -------------------------------------------------------------------


def solve_least_squares(design, targets, fit_intercept=True):
    """Minimize ``sum_i ||A x_i + b - y_i||^2`` through the normal equations.

    Returns ``(A, b)`` with ``A`` of shape ``(d_out, d_in)``; ``b`` is zeros
    when ``fit_intercept`` is False.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(targets, dtype=float)
    m, d_in = x.shape
    if fit_intercept:
        x = np.hstack([x, np.ones((m, 1))])
    gram = x.T @ x
    # column scaling keeps the condition test about rank, not units
    scale = np.sqrt(np.clip(np.diag(gram), np.finfo(float).tiny, None))
    gram_s = gram / np.outer(scale, scale)
    eig = np.linalg.eigvalsh(gram_s)
    if eig[0] <= 0 or eig[-1] / eig[0] > MAX_CONDITION:
        raise SingularDesignError(
            f"least-squares design is rank deficient (condition {eig[-1] / max(eig[0], 1e-300):.3g})"
        )
    coef = linalg.cho_solve(linalg.cho_factor(gram_s), (x.T @ y) / scale[:, None]) / scale[:, None]
    if fit_intercept:
        return coef[:d_in].T.copy(), coef[d_in].copy()
    return coef.T.copy(), np.zeros(y.shape[1])


def fit_linear_least_squares(dataset, j, targets, fit_intercept=True):
    """Exact least-squares map from ``x[:, j]`` to ``targets`` (rows = trajectories)."""
    return solve_least_squares(dataset.x[:, j], targets, fit_intercept)


class LinearScoreModel:
    """``f(t_j, x) = A_j x + b_j`` for each grid time ``t_j``."""

    def __init__(self, schedule, A=None, b=None, d=None):
        self.schedule = schedule
        n = schedule.n
        if A is None:
            if d is None:
                raise ValueError("need A or d")
            A = np.zeros((n, d, d))
        self.A = np.array(A, dtype=float)
        self.b = np.zeros(self.A.shape[:2]) if b is None else np.array(b, dtype=float)
        if self.A.shape[0] != n or self.b.shape != self.A.shape[:2]:
            raise ConfigError("need one (A_j, b_j) per schedule timestep")

    @property
    def d(self):
        return self.A.shape[1]

    def __call__(self, t, x):
        j = self.schedule.index(t)
        x = np.asarray(x, dtype=float)
        return x @ self.A[j].T + self.b[j]

    def set_step(self, j, A, b=None):
        self.A[j] = A
        self.b[j] = 0.0 if b is None else b

    def copy(self):
        return LinearScoreModel(self.schedule, self.A.copy(), self.b.copy())


# -- MLP ------------------------------------------------------------------------


def _act(name):
    if name == "tanh":
        return np.tanh, lambda a, h: 1.0 - h * h
    if name == "relu":
        return lambda a: np.maximum(a, 0.0), lambda a, h: (a > 0).astype(float)
    raise ConfigError(f"unknown activation {name!r}")


class TimeMlp:
    """Fully connected network on ``[x, t / T]`` shared across timesteps.

    Parameters live in one flat vector ``theta``; per-layer weights
    ``W_l`` (out x in) and biases ``b_l`` are views into it, layer by layer.
    """

    def __init__(self, widths, schedule, activation="tanh", theta=None):
        widths = [int(w) for w in widths]
        if len(widths) < 2:
            raise ConfigError("an MLP needs at least input and output widths")
        if widths[0] != widths[-1] + 1:
            raise ConfigError(f"input width must be d+1 for output width d, got {widths}")
        self.widths = widths
        self.schedule = schedule
        self.activation = activation
        self._f, self._df = _act(activation)
        self.theta = np.zeros(self.n_params) if theta is None else np.array(theta, dtype=float)
        if self.theta.shape != (self.n_params,):
            raise ConfigError(f"theta must have {self.n_params} entries")

    @property
    def d(self):
        return self.widths[-1]

    @property
    def n_params(self):
        return sum((a + 1) * b for a, b in zip(self.widths[:-1], self.widths[1:]))

    @classmethod
    def initialized(cls, widths, schedule, seed, activation="tanh"):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
        model = cls(widths, schedule, activation)
        gen = rngmod.stream(seed, "init")
        parts = []
        for fan_in, fan_out in zip(model.widths[:-1], model.widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            parts.append(gen.uniform(-bound, bound, size=fan_in * fan_out + fan_out))
        model.theta = np.concatenate(parts)
        return model

    def layers(self, theta=None):
        """``[(W_l, b_l), ...]`` as views into ``theta``."""
        theta = self.theta if theta is None else theta
        out, o = [], 0
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            w = theta[o : o + fan_in * fan_out].reshape(fan_out, fan_in)
            o += fan_in * fan_out
            out.append((w, theta[o : o + fan_out]))
            o += fan_out
        return out

    def embed(self, t):
        return np.asarray(t, dtype=float) / self.schedule.horizon

    def _inputs(self, t, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            self.schedule.index(t)
            tau = np.full((x.shape[0], 1), self.embed(t))
        else:
            self.schedule.indices(t)
            tau = self.embed(t).reshape(-1, 1)
        return np.hstack([x, tau])

    def _forward(self, h, theta=None):
        cache = [(None, h)]
        layers = self.layers(theta)
        for k, (w, b) in enumerate(layers):
            a = h @ w.T + b
            h = a if k == len(layers) - 1 else self._f(a)
            cache.append((a, h))
        return h, cache

    def __call__(self, t, x):
        single = np.ndim(x) == 1
        out, _ = self._forward(self._inputs(t, x))
        return out[0] if single else out

    def loss_grad(self, t, x, target, theta=None):
        """Batch mean of ``||f(t, x) - target||^2`` and its gradient in ``theta``."""
        h0 = self._inputs(t, x)
        target = np.atleast_2d(target)
        out, cache = self._forward(h0, theta)
        n = out.shape[0]
        diff = out - target
        loss = float(np.sum(diff * diff) / n)
        layers = self.layers(theta)
        grads = [None] * len(layers)
        delta = 2.0 * diff / n
        for k in range(len(layers) - 1, -1, -1):
            w, _ = layers[k]
            h_in = cache[k][1]
            grads[k] = (delta.T @ h_in, delta.sum(axis=0))
            if k > 0:
                a_prev, h_prev = cache[k]
                delta = (delta @ w) * self._df(a_prev, h_prev)
        flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
        return loss, flat

    def copy(self):
        return TimeMlp(self.widths, self.schedule, self.activation, self.theta.copy())

    def arch(self):
        return {"widths": self.widths, "activation": self.activation}


def mlp_forward(model, t, x):
    return model(t, x)


def mlp_loss_grad(model, t, x, target):
    return model.loss_grad(t, x, target)


class PerTimestepModel:
    """Independent model per grid time."""

    def __init__(self, schedule, models):
        if len(models) != schedule.n:
            raise ConfigError("need one model per timestep")
        self.schedule = schedule
        self.models = list(models)

    @property
    def d(self):
        return self.models[0].d

    def __call__(self, t, x):
        return self.models[self.schedule.index(t)](t, x)


# -- checkpoints ------------------------------------------------------------------


def save_model(path, model):
    sched = model.schedule.to_dict()
    if isinstance(model, LinearScoreModel):
        io.write_binary(path, {"type": "linear", "schedule": sched, "d": model.d}, {"A": model.A, "b": model.b})
    elif isinstance(model, TimeMlp):
        io.write_binary(path, {"type": "mlp", "arch": model.arch(), "schedule": sched}, {"theta": model.theta})
    elif isinstance(model, PerTimestepModel):
        first = model.models[0]
        if not all(isinstance(m, TimeMlp) and m.widths == first.widths for m in model.models):
            raise TypeError("per-timestep checkpoints need MLPs of one architecture")
        thetas = np.stack([m.theta for m in model.models])
        io.write_binary(path, {"type": "per-timestep-mlp", "arch": first.arch(), "schedule": sched}, {"thetas": thetas})
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")


def load_model(path):
    header, arrays = io.read_binary(path)
    sched = Schedule.from_dict(header["schedule"])
    kind = header["type"]
    if kind == "linear":
        return LinearScoreModel(sched, arrays["A"], arrays["b"])
    if kind == "mlp":
        arch = header["arch"]
        return TimeMlp(arch["widths"], sched, arch["activation"], arrays["theta"])
    if kind == "per-timestep-mlp":
        arch = header["arch"]
        return PerTimestepModel(
            sched, [TimeMlp(arch["widths"], sched, arch["activation"], th) for th in arrays["thetas"]]
        )
    raise ValueError(f"{path}: unknown checkpoint type {kind!r}")


def parse_arch(text):
    """``"d,H,d"`` -> widths ``[d+1, H, d]`` (the input gains the time column)."""
    parts = [int(p) for p in str(text).split(",") if p.strip()]
    if len(parts) < 2 or parts[0] != parts[-1]:
        raise ConfigError(f"--arch must look like 'd,H,...,d', got {text!r}")
    return [parts[0] + 1] + parts[1:]

