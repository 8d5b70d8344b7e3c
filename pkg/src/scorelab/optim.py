"""SGD and AdamW on flat parameter vectors, with learning-rate schedules."""

import math
from dataclasses import dataclass, field

import numpy as np

from scorelab.errors import ConfigError, NumericError


@dataclass
class OptimizerConfig:
    """Optimizer hyperparameters.

    ``schedule`` is ``"constant"`` or ``"cosine"`` (linear warmup over the
    first ``warmup_fraction`` of ``total_steps``, then cosine decay to 0).
    """

    name: str = "adamw"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    schedule: str = "constant"
    warmup_fraction: float = 0.1

    def __post_init__(self):
        if self.name not in ("sgd", "adamw"):
            raise ConfigError(f"unknown optimizer {self.name!r}")
        if self.schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown lr schedule {self.schedule!r}")
        if not self.lr >= 0:
            raise ConfigError("lr must be nonnegative")
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigError("warmup_fraction must be in [0, 1)")


def scheduled_lr(config, step, total_steps):
    """Learning rate used at (0-based) ``step`` out of ``total_steps``."""
    if config.schedule == "constant":
        return config.lr
    last = max(total_steps - 1, 1)
    warm = int(round(config.warmup_fraction * last))
    if step < warm:
        return config.lr * step / warm
    if step >= last:
        return 0.0
    progress = (step - warm) / (last - warm)
    return 0.5 * config.lr * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    config: OptimizerConfig
    total_steps: int = 1
    step: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    @property
    def lr(self):
        return scheduled_lr(self.config, self.step, self.total_steps)


def optimizer_step(state, theta, grad):
    """Return updated parameters and advance ``state``.

    Raises:
        NumericError: if ``grad`` holds NaN or Inf.
    """
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if grad.shape != theta.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match parameters {theta.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient", where=f"optimizer step {state.step}")
    cfg = state.config
    lr = state.lr
    if cfg.name == "sgd":
        new = theta - lr * (grad + cfg.weight_decay * theta)
    else:
        if state.m is None:
            state.m = np.zeros_like(theta)
            state.v = np.zeros_like(theta)
        state.m = cfg.beta1 * state.m + (1 - cfg.beta1) * grad
        state.v = cfg.beta2 * state.v + (1 - cfg.beta2) * grad * grad
        n = state.step + 1
        m_hat = state.m / (1 - cfg.beta1**n)
        v_hat = state.v / (1 - cfg.beta2**n)
        # decoupled weight decay
        new = theta * (1 - lr * cfg.weight_decay) - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    state.step += 1
    return new
