"""Exception hierarchy shared by all modules."""


class VPHomeoError(Exception):
    """Base class for every error raised by this package."""


class DomainError(VPHomeoError, ValueError):
    """Arguments outside the mathematical domain of an operation."""


class EvaluationError(VPHomeoError, ArithmeticError):
    """A map or integrand returned non-finite values."""


class InfeasibleError(VPHomeoError, ValueError):
    """A requested target violates 0 <= ratio <= 1 (cannot be realized)."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class DegeneracyError(VPHomeoError, ValueError):
    """A map is not invertible (zero derivative on a sample or plateau)."""


class BudgetError(VPHomeoError, RuntimeError):
    """An iterative construction ran out of budget before reaching its target.

    The best result found so far is attached as ``best``.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class HypothesisError(VPHomeoError, ValueError):
    """Integrability hypothesis of a transfer result is not met."""
