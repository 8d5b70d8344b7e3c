"""Denoising and bootstrapped score matching.

Timestep indices here are 0-based: ``j = 0`` is ``t_1``.  ``k0`` counts the
leading timesteps fitted with plain DSM, so bootstrapping starts at index
``j = k0`` and needs ``k0 >= 1``.

The bootstrapped target at index ``j`` is::

    y_j = -z_j / sigma_j^2 + alpha_j * (s_prev(x_{j-1}) + z_{j-1} / sigma_{j-1}^2)

When ``s_prev`` is the true score the correction has conditional mean zero
given ``x_j`` and cancels most of the ``x_0``-driven noise in ``-z_j / sigma_j^2``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from scorelab import rng as rngmod
from scorelab.errors import ConfigError, NumericError
from scorelab.models import LinearScoreModel, PerTimestepModel, TimeMlp, solve_least_squares
from scorelab.optim import OptimizerConfig, OptimizerState, optimizer_step
from scorelab.schedule import sigma_sq

ALPHA_MODES = ("lemma", "sqrt", "fixed", "adaptive")
PAIRINGS = ("trajectories", "all")


@dataclass
class DsmConfig:
    """Joint DSM training.

    ``pairs_per_epoch`` sets what one epoch means for the shared network:
    ``"trajectories"`` visits each trajectory once at a uniformly random
    timestep, ``"all"`` draws ``m * N`` uniform (trajectory, timestep) pairs.
    With ``parameterization="noise"`` the network regresses ``z / sigma``
    instead of the score; wrap it in :class:`NoiseToScore` to evaluate it.
    """

    epochs: int = 1
    batch_size: int = 256
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    pairs_per_epoch: str = "trajectories"
    fit_intercept: bool = True
    parameterization: str = "score"

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        if self.parameterization not in ("score", "noise"):
            raise ConfigError("parameterization must be 'score' or 'noise'")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.pairs_per_epoch not in PAIRINGS:
            raise ConfigError(f"pairs_per_epoch must be one of {PAIRINGS}")


@dataclass
class BsmConfig:
    """Bootstrapped score matching.

    ``k0=None`` means ``N // 4``.  ``epochs_per_timestep`` applies to
    per-timestep networks; ``dsm_epochs``/``epochs`` apply to the shared
    network variant, which trains ``dsm_epochs`` plain DSM epochs first.
    """

    k0: int = None
    alpha_mode: str = "lemma"
    alpha_value: float = None
    epochs_per_timestep: int = 5
    batch_size: int = 256
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    fit_intercept: bool = True
    epochs: int = 100
    dsm_epochs: int = 90
    pairs_per_epoch: str = "trajectories"

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        if self.alpha_mode not in ALPHA_MODES:
            raise ConfigError(f"alpha_mode must be one of {ALPHA_MODES}")
        if self.alpha_mode == "fixed":
            if self.alpha_value is None or not 0 <= self.alpha_value <= 1:
                raise ConfigError("fixed alpha needs alpha_value in [0, 1]")
        if self.k0 is not None and self.k0 < 1:
            raise ConfigError("k0 must be >= 1")
        if not 0 <= self.dsm_epochs <= self.epochs:
            raise ConfigError("dsm_epochs must lie in [0, epochs]")
        if self.pairs_per_epoch not in PAIRINGS:
            raise ConfigError(f"pairs_per_epoch must be one of {PAIRINGS}")

    def resolved_k0(self, n):
        k0 = max(1, n // 4) if self.k0 is None else self.k0
        if k0 > n:
            raise ConfigError(f"k0={k0} exceeds the number of timesteps N={n}")
        return k0


@dataclass
class TrainResult:
    model: object
    trace: list
    alphas: np.ndarray = None

    def trace_rows(self):
        return [list(r) for r in self.trace]


# -- DSM ------------------------------------------------------------------------


def dsm_total_loss(model, dataset):
    """``(1/mN) sum_{i,j} ||f(t_j, x_ij) + z_ij / sigma_j^2||^2``."""
    total = 0.0
    for j, t in enumerate(dataset.schedule.times):
        r = model(t, dataset.x[:, j]) - dataset.dsm_target(j)
        total += np.sum(r * r)
    return float(total / (dataset.m * dataset.n))


def _check_loss(loss, where):
    if not math.isfinite(loss):
        raise NumericError("training loss diverged", where=where)


def _draw_pairs(gen, m, n, pairing):
    if pairing == "trajectories":
        return gen.permutation(m), gen.integers(0, n, size=m)
    count = m * n
    return gen.integers(0, m, size=count), gen.integers(0, n, size=count)


def _steps_per_epoch(m, n, batch, pairing):
    pairs = m if pairing == "trajectories" else m * n
    return -(-pairs // batch)


def fit_dsm_linear(dataset, fit_intercept=True, model=None):
    """Exact per-timestep least squares onto ``-z_j / sigma_j^2``."""
    model = LinearScoreModel(dataset.schedule, d=dataset.d) if model is None else model.copy()
    for j in range(dataset.n):
        A, b = solve_least_squares(dataset.x[:, j], dataset.dsm_target(j), fit_intercept)
        model.set_step(j, A, b)
    return model


def train_dsm(model, dataset, config):
    """Minimize the joint DSM loss.

    Linear models are solved exactly per timestep (the joint loss separates).
    A :class:`TimeMlp` is trained on minibatches of random (trajectory,
    timestep) pairs.  With ``epochs == 0`` the input model is returned as is.
    """
    if config.epochs == 0:
        return TrainResult(model, [])
    if isinstance(model, LinearScoreModel):
        fitted = fit_dsm_linear(dataset, config.fit_intercept, model)
        return TrainResult(fitted, [(0, dsm_total_loss(fitted, dataset), 0.0)])
    if not isinstance(model, TimeMlp):
        raise TypeError(f"train_dsm does not handle {type(model).__name__}")
    return _train_shared(model.copy(), dataset, config, config.epochs, bootstrap=None)


def _train_shared(model, dataset, config, epochs, bootstrap):
    """Minibatch training of a shared network.

    ``bootstrap`` is ``None`` (plain DSM) or ``(first_epoch, k0, alphas)``:
    from ``first_epoch`` on, pairs at index ``j >= k0`` use bootstrapped
    targets built from a snapshot of the network taken at each epoch start.
    """
    m, n = dataset.m, dataset.n
    times = dataset.schedule.times
    sig2 = dataset.schedule.sigma_sqs
    per_epoch = _steps_per_epoch(m, n, config.batch_size, config.pairs_per_epoch)
    state = OptimizerState(config.optimizer, total_steps=per_epoch * epochs)
    noise_target = getattr(config, "parameterization", "score") == "noise"
    if noise_target and bootstrap is not None:
        raise ConfigError("bootstrapped targets are defined in score space only")
    trace = []
    for epoch in range(epochs):
        gen = rngmod.stream(config.seed, "batch", epoch)
        rows, cols = _draw_pairs(gen, m, n, config.pairs_per_epoch)
        snapshot = None
        if bootstrap is not None and epoch >= bootstrap[0]:
            snapshot = model.copy()
        for start in range(0, rows.size, config.batch_size):
            i = rows[start : start + config.batch_size]
            j = cols[start : start + config.batch_size]
            x = dataset.x[i, j]
            z = x - np.exp(-times[j])[:, None] * dataset.x0[i]
            if noise_target:
                target = z / np.sqrt(sig2[j])[:, None]
            else:
                target = -z / sig2[j][:, None]
            if snapshot is not None:
                _, k0, alphas = bootstrap
                boot = j >= k0
                if np.any(boot):
                    ib, jb = i[boot], j[boot] - 1
                    xp = dataset.x[ib, jb]
                    zp = xp - np.exp(-times[jb])[:, None] * dataset.x0[ib]
                    corr = snapshot(times[jb], xp) + zp / sig2[jb][:, None]
                    target[boot] += alphas[j[boot]][:, None] * corr
            lr = state.lr
            loss, grad = model.loss_grad(times[j], x, target)
            _check_loss(loss, f"epoch {epoch}, step {state.step}")
            model.theta = optimizer_step(state, model.theta, grad)
            trace.append((state.step - 1, loss, lr))
    return TrainResult(model, trace)


class NoiseToScore:
    """Score view ``-eps(t, x) / sigma_t`` of a network trained to predict ``z / sigma``."""

    def __init__(self, model):
        self.model = model
        self.schedule = model.schedule

    @property
    def d(self):
        return self.model.d

    def __call__(self, t, x):
        return -self.model(t, x) / np.sqrt(sigma_sq(t))


# -- BSM ------------------------------------------------------------------------


def alpha(t_prev, t, mode="lemma", value=None):
    """Bootstrap weight for the step ``t_prev -> t``.

    * ``lemma``: ``e^{-(t - t')} sigma_{t'}^2 / sigma_t^2`` (makes the target unbiased)
    * ``sqrt``: ``e^{-(t - t')} sqrt(sigma_{t'}^2 / sigma_t^2)``
    * ``fixed``: ``value``
    * ``adaptive``: ``1 - sigma_t / (sigma_{t - t'} + sigma_t)``
    """
    t_prev, t = float(t_prev), float(t)
    if t_prev < 0 or t_prev >= t:
        raise ValueError(f"alpha needs 0 <= t_prev < t, got t_prev={t_prev}, t={t}")
    if mode == "fixed":
        if value is None or not 0 <= value <= 1:
            raise ValueError("fixed alpha needs a value in [0, 1]")
        return float(value)
    ratio = float(sigma_sq(t_prev) / sigma_sq(t))
    if mode == "lemma":
        return math.exp(-(t - t_prev)) * ratio
    if mode == "sqrt":
        return math.exp(-(t - t_prev)) * math.sqrt(ratio)
    if mode == "adaptive":
        s_t = math.sqrt(sigma_sq(t))
        return 1.0 - s_t / (math.sqrt(sigma_sq(t - t_prev)) + s_t)
    raise ValueError(f"unknown alpha mode {mode!r}")


def schedule_alphas(schedule, mode="lemma", value=None):
    """``alphas[j]`` for the step ``t_{j-1} -> t_j``; ``alphas[0]`` is 0."""
    out = np.zeros(schedule.n)
    for j in range(1, schedule.n):
        out[j] = alpha(schedule.times[j - 1], schedule.times[j], mode, value)
    return out


@dataclass
class BsmTargets:
    y: np.ndarray
    alpha: float
    j: int


def bsm_targets(dataset, j, prev_model, alpha_j):
    """Bootstrapped regression targets at index ``j`` (needs ``j >= 1``).

    ``prev_model`` is evaluated at ``t_{j-1}`` on the same trajectories.
    """
    if j < 1:
        raise ValueError("bootstrapped targets need a previous timestep (j >= 1)")
    if not 0 <= alpha_j <= 1:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha_j}")
    y = dataset.dsm_target(j)
    if alpha_j != 0:
        t_prev = dataset.schedule.times[j - 1]
        y = y + alpha_j * (prev_model(t_prev, dataset.x[:, j - 1]) - dataset.dsm_target(j - 1))
    return BsmTargets(y, float(alpha_j), j)


def _fit_mlp_step(net, t, x, y, config, seed_block, where):
    m = x.shape[0]
    per_epoch = -(-m // config.batch_size)
    state = OptimizerState(config.optimizer, total_steps=per_epoch * config.epochs_per_timestep)
    trace = []
    for epoch in range(config.epochs_per_timestep):
        order = rngmod.stream(config.seed, "batch", seed_block * 100003 + epoch).permutation(m)
        for start in range(0, m, config.batch_size):
            idx = order[start : start + config.batch_size]
            lr = state.lr
            loss, grad = net.loss_grad(t, x[idx], y[idx])
            _check_loss(loss, where)
            net.theta = optimizer_step(state, net.theta, grad)
            trace.append((state.step - 1, loss, lr))
    return trace


def train_bsm(dataset, config, model="linear", widths=None, activation="tanh"):
    """Sequential per-timestep fitting: DSM for ``j < k0``, bootstrapped after.

    Args:
        dataset: forward trajectories.
        config: :class:`BsmConfig`.
        model: ``"linear"`` for exact least squares per timestep or ``"mlp"``
            for one :class:`TimeMlp` per timestep, each warm-started from the
            previous one.
        widths: MLP widths when ``model == "mlp"``.

    Returns:
        :class:`TrainResult` whose ``trace`` rows are ``(j, step, loss, lr)``.
    """
    sched = dataset.schedule
    n = sched.n
    k0 = config.resolved_k0(n)
    alphas = schedule_alphas(sched, config.alpha_mode, config.alpha_value)
    alphas[:k0] = 0.0
    trace = []
    if model == "linear":
        fitted = LinearScoreModel(sched, d=dataset.d)
        for j in range(n):
            y = dataset.dsm_target(j) if j < k0 else bsm_targets(dataset, j, fitted, alphas[j]).y
            A, b = solve_least_squares(dataset.x[:, j], y, config.fit_intercept)
            fitted.set_step(j, A, b)
            r = dataset.x[:, j] @ A.T + b - y
            trace.append((j, 0, float(np.mean(np.sum(r * r, axis=1))), 0.0))
        return TrainResult(fitted, trace, alphas)
    if model != "mlp":
        raise ConfigError(f"unknown BSM model kind {model!r}")
    if widths is None:
        raise ConfigError("per-timestep MLPs need widths")
    nets = []
    net = TimeMlp.initialized(widths, sched, config.seed, activation)
    for j in range(n):
        net = net.copy()
        t = sched.times[j]
        if j < k0:
            y = dataset.dsm_target(j)
        else:
            y = bsm_targets(dataset, j, nets[j - 1], alphas[j]).y
        rows = _fit_mlp_step(net, t, dataset.x[:, j], y, config, j, f"timestep index {j}")
        trace.extend((j, *r) for r in rows)
        nets.append(net)
    return TrainResult(PerTimestepModel(sched, nets), trace, alphas)


def train_bsm_shared(model, dataset, config):
    """Bootstrapping with one shared network (experimental).

    The first ``dsm_epochs`` epochs are plain DSM.  Each later epoch freezes
    a snapshot of the network and uses it as the previous-step score in the
    targets of every pair at index ``j >= k0``.
    """
    k0 = config.resolved_k0(dataset.n)
    alphas = schedule_alphas(dataset.schedule, config.alpha_mode, config.alpha_value)
    alphas[:k0] = 0.0
    if config.epochs == 0:
        return TrainResult(model, [], alphas)
    result = _train_shared(model.copy(), dataset, config, config.epochs, (config.dsm_epochs, k0, alphas))
    result.alphas = alphas
    return result
