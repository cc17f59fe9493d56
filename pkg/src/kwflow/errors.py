"""Exception types shared across the package."""


class KwflowError(Exception):
    """Base class for toolkit errors."""


class DegreeError(KwflowError, ValueError):
    """A form degree left the range allowed by the operation."""


class DomainError(KwflowError, ValueError):
    """The operation does not support the given domain, or domains differ."""


class NonPeriodicFieldError(KwflowError, ValueError):
    """A sampled field is not periodic on a periodic domain."""


class BallTooLargeError(KwflowError, ValueError):
    """A quadrature ball would overlap itself under periodicity."""


class ConvergenceError(KwflowError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final residual {residual:.3e})")
        self.residual = residual


class BlowUpError(KwflowError, RuntimeError):
    """A time integration exceeded its sup-norm ceiling."""


class UndefinedFrequencyError(KwflowError, ValueError):
    """h vanished at a requested radius, so N is undefined there."""


class FitRangeError(KwflowError, ValueError):
    """A scaling fit lacks a zero set or enough distance levels."""


class AmbiguousOverlapError(KwflowError, ValueError):
    """Two local sign choices cannot be compared on a ball overlap."""


class ConfigError(KwflowError, ValueError):
    """A run configuration has unknown keys or malformed values."""
