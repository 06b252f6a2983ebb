"""Exception types shared across the lab."""


class RangeLabError(Exception):
    """Base class for all rangelab errors."""


class DistributionError(RangeLabError, ValueError):
    """Invalid step distribution specification."""


class ProbabilitiesDoNotSumToOne(DistributionError):
    pass


class NonzeroMean(DistributionError):
    pass


class NotSymmetric(DistributionError):
    pass


class OneDimensionalSupport(DistributionError):
    pass


class BudgetExceeded(RangeLabError):
    """Requested computation exceeds a configured memory or work budget."""


class OutOfBounds(RangeLabError, IndexError):
    """Window or block indices fall outside the sampled path."""


class EmptyWindow(RangeLabError, ValueError):
    pass


class DomainError(RangeLabError, ValueError):
    """Argument outside the mathematical domain of a formula."""


class CenteringUnavailable(RangeLabError):
    """No sufficiently precise mean-range value for the requested n."""


class MaximizerAtBoundary(RangeLabError):
    """Conjugate maximizer hit the top of the lambda grid; extend the grid."""


class NoBracket(RangeLabError):
    """Root bracketing failed; the curve does not cover a sign change."""


class NonConvexCurve(RangeLabError):
    """Convex projection moved the curve by more than statistical noise."""


class RegimeViolation(RangeLabError, ValueError):
    """theta * r_n exceeds n, outside the regime of the tail bounds."""


class NoDriftAtom(RangeLabError):
    """Distribution has no atom with positive first coordinate."""


class Stagnation(RangeLabError):
    """Splitting levels stopped increasing before reaching the target."""


class InsufficientData(RangeLabError):
    """Not enough informative estimates to fit."""


class DegenerateBlocks(RangeLabError, ValueError):
    """Block construction produced m < 2 or M < 1."""


class RejectionBudgetExceeded(RangeLabError):
    """Conditional sampling acceptance rate fell below the configured floor."""


class BoundNotApplicable(RangeLabError):
    """Preconditions of the certified lower bound do not hold."""


class InvalidConfig(RangeLabError, ValueError):
    pass


class PartialFailure(RangeLabError):
    """Some tasks of a run failed; completed results were persisted."""
