"""Exception and warning types shared across the package."""


class DomainError(ValueError):
    """Argument outside the region where a function is defined."""


class SeriesConvergenceError(ArithmeticError):
    """A power series hit its term cap before meeting the tolerance."""


class PrecisionLossWarning(RuntimeWarning):
    """A formula lost significant digits to cancellation."""


class BracketError(RuntimeError):
    """No sign change was found for a root that should exist."""


class SolverError(RuntimeError):
    """An iterative solver failed to converge.

    ``history`` holds whatever per-iteration diagnostics the solver kept.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class InvariantViolation(RuntimeError):
    """A computed solution violates a property that theory guarantees."""


class UniquenessWarning(RuntimeWarning):
    """A post-solve sign scan found more than one sign change."""


class CensoringWarning(RuntimeWarning):
    """Too many Monte Carlo paths were cut off by the simulation horizon."""


class DegenerateGridError(RuntimeError):
    """A grid construction has no usable interior contact point."""
