"""Exception types shared across the package."""


class RetParityError(Exception):
    """Base class for all errors raised by retparity."""


class DimensionMismatch(RetParityError, ValueError):
    pass


class SingularMatrix(RetParityError, ArithmeticError):
    pass


class ValidationError(RetParityError, ValueError):
    """An input violates a documented invariant (stochasticity, ranges, ...)."""


class InvalidParameter(RetParityError, ValueError):
    pass


class AssumptionViolated(RetParityError, ValueError):
    """A precondition of a structural result does not hold for the given pair."""

    def __init__(self, assumption: str, detail: str):
        super().__init__(f"{assumption}: {detail}")
        self.assumption = assumption
        self.detail = detail


class WitnessPreconditionViolated(RetParityError, ValueError):
    pass


class BatchTooSmall(RetParityError, ValueError):
    pass


class UnequalCounts(RetParityError, ValueError):
    pass


class TapeReused(RetParityError, RuntimeError):
    pass


class ShapeMismatch(RetParityError, ValueError):
    pass


class NonFiniteValue(RetParityError, FloatingPointError):
    pass


class RepeatedItem(RetParityError, ValueError):
    pass


class EpisodeFinished(RetParityError, RuntimeError):
    pass


class NoValidActions(RetParityError, RuntimeError):
    pass


class EmptyBatch(RetParityError, ValueError):
    pass


class ParseError(RetParityError, ValueError):
    pass


class DegenerateData(RetParityError, ValueError):
    pass


class NumericalFailure(RetParityError, ArithmeticError):
    """Internal numerical breakdown (pivot limit, lost feasibility)."""
