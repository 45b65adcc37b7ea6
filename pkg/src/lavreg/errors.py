"""Exception and warning classes raised across the package."""

__all__ = [
    "LavregError",
    "InvalidParameterError",
    "InvalidDimensionError",
    "NumericalError",
    "WindowError",
    "DecompositionError",
    "UndefinedRatioError",
    "AccuracyWarning",
    "WindowWarning",
]


class LavregError(Exception):
    """Base class for all errors raised by lavreg."""


class InvalidParameterError(LavregError, ValueError):
    """A scalar or vector argument violates an operation's precondition."""


class InvalidDimensionError(InvalidParameterError):
    """An operator dimension is too small or vector lengths do not match."""


class NumericalError(LavregError, ArithmeticError):
    """A factorization or solve broke down."""


class WindowError(LavregError):
    """A root or band could not be located inside the admissible parameter window.

    The ``trace`` attribute holds whatever (parameter, value) pairs were
    evaluated before giving up, so callers can embed them in reports.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class DecompositionError(LavregError):
    """Range and nullspace bases are too close to parallel to split a vector."""


class UndefinedRatioError(LavregError, ZeroDivisionError):
    """A quasi-optimality ratio has a vanishing denominator."""


class AccuracyWarning(UserWarning):
    """Quadrature or refinement did not reach the requested tolerance."""


class WindowWarning(UserWarning):
    """A construction ran outside the numerically ill-posed parameter window."""
