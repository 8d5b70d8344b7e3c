"""Exception hierarchy."""


class ScorelabError(Exception):
    """Base class for all package errors."""


class ConfigError(ScorelabError, ValueError):
    """Invalid configuration or invariant violation at construction."""


class NumericError(ScorelabError, FloatingPointError):
    """NaN/Inf or divergence during a numeric routine.

    ``where`` carries the offending step / timestep index when known.
    """

    def __init__(self, message, where=None):
        super().__init__(message if where is None else f"{message} (at {where})")
        self.where = where


class SingularDesignError(ScorelabError, ArithmeticError):
    """Least-squares design (or covariance) too ill-conditioned to solve."""


class OffGridError(ScorelabError, ValueError):
    """A per-timestep model was queried at a time not on its grid."""


class UndefinedRatioError(ScorelabError, ZeroDivisionError):
    """A moment ratio was requested with a vanishing denominator."""
