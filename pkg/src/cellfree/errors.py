"""Exception types raised by the simulator.

All of them derive from :class:`CellFreeError` so callers (the CLI in
particular) can separate numerical failures from plain bad input.
"""


class CellFreeError(Exception):
    """Base class for every error raised by this package."""


class EmptyInputError(CellFreeError, ValueError):
    """A count or collection that must be non-empty was empty."""


class SingularDistanceError(CellFreeError, ValueError):
    """A zero access distance would make the path gain infinite."""


class DomainError(CellFreeError, ValueError):
    """An argument lies outside the domain of a distance-law function."""


class DegenerateFitError(CellFreeError, ValueError):
    """Gamma moment match produced a shape too close to 1 (or below)."""


class NumericalError(CellFreeError, ArithmeticError):
    """Base class for failures of a numerical kernel on valid input."""


class IllConditionedError(NumericalError):
    """A Gram matrix was rank deficient or too badly conditioned.

    Attributes
    ----------
    trial : int or None
        Index of the offending matrix within the batch, if known.
    condition : float
        Estimated condition number of the equilibrated Gram matrix.
    """

    def __init__(self, message, trial=None, condition=float("inf")):
        super().__init__(message)
        self.trial = trial
        self.condition = condition


class ConditioningAlarm(NumericalError):
    """Too many Monte Carlo trials had to be rejected and resampled."""


class QuadratureError(NumericalError):
    """Adaptive quadrature failed to meet its tolerance.

    The partially converged estimate is kept on ``partial``.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
