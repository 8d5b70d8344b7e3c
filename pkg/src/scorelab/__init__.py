"""Score-matching laboratory for Ornstein-Uhlenbeck diffusions.

Joint denoising score matching (DSM), bootstrapped score matching (BSM),
reverse-SDE sampling and Monte-Carlo checks of the identities that tie them
together, all against closed-form Gaussian / Gaussian-mixture oracles.
"""

from scorelab.errors import (
    ConfigError,
    NumericError,
    OffGridError,
    ScorelabError,
    SingularDesignError,
    UndefinedRatioError,
)
from scorelab.schedule import NoisedDataset, Schedule, make_schedule, noise_dataset, sigma
from scorelab.targets import GaussianTarget, GmmTarget, ScoreOracle, sample_target

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "GaussianTarget",
    "GmmTarget",
    "NoisedDataset",
    "NumericError",
    "OffGridError",
    "Schedule",
    "ScoreOracle",
    "ScorelabError",
    "SingularDesignError",
    "UndefinedRatioError",
    "make_schedule",
    "noise_dataset",
    "sample_target",
    "sigma",
]
