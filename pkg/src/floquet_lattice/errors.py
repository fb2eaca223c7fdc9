"""Exception and warning types raised across the package."""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


class NonPositiveParameter(ConfigError):
    pass


class PhaseCountMismatch(ConfigError):
    pass


class BarrierOverlap(ConfigError):
    pass


class IndexOutOfRange(IndexError):
    pass


class ConvergenceError(RuntimeError):
    """The exponential series did not converge within ``p_max`` orders."""


class StepperFailure(RuntimeError):
    pass


class EigenFailure(RuntimeError):
    pass


class NoApproach(ValueError):
    """The minimum of a band distance sits on the edge of the search window."""


class PairingAmbiguity(ValueError):
    pass


class OddStepCount(ValueError):
    pass


class MissingTrajectory(ValueError):
    pass


class CacheCorruption(RuntimeError):
    pass


class TruncationWarning(UserWarning):
    """Significant weight reached the edge of the truncated basis."""


class NonUnitaryWarning(UserWarning):
    pass


class ContinuationAmbiguity(UserWarning):
    """Band continuation between neighbouring quasi-momenta is not clear-cut."""


class IOFailure(OSError):
    """An output file or directory could not be written."""
