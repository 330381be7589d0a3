"""Exception types raised across the package."""

from __future__ import annotations


class RobustLRError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(RobustLRError, ValueError):
    pass


class NonFiniteValue(RobustLRError, ValueError):
    pass


class EmptyDataset(RobustLRError, ValueError):
    pass


class TooFewSamples(RobustLRError, ValueError):
    pass


class InvalidCovariance(RobustLRError, ValueError):
    pass


class NotPositiveDefinite(RobustLRError, ValueError):
    pass


class EpsilonTooLarge(RobustLRError, ValueError):
    pass


class ConfigError(RobustLRError, ValueError):
    pass


class ProvenanceLost(RobustLRError, ValueError):
    pass


class DegenerateScale(RobustLRError):
    pass


class SingularSystem(RobustLRError):
    pass


class NoThresholdFound(RobustLRError):
    """The spectral test failed but no tail threshold satisfies the filter inequality.

    ``trace`` carries the step trace at the point of failure.
    """

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class IterationLimitExceeded(RobustLRError):
    pass


class EpsOutOfRange(RobustLRError, ValueError):
    pass


class RangeViolation(RobustLRError, ValueError):
    pass


class RootFindFailure(RobustLRError):
    pass


class DivergentChiSquare(RobustLRError, ValueError):
    pass


class GridOverflow(RobustLRError):
    pass


class QueryOutOfRange(RobustLRError, ValueError):
    pass


class IoError(RobustLRError, OSError):
    """A dataset or report file could not be read or written."""
