"""Exception types raised across the package."""


class BallMPCError(Exception):
    """Base class for all package errors."""


class OutOfDomainError(BallMPCError, ValueError):
    """A query point lies outside the world bounds."""


class DegenerateGradientError(BallMPCError):
    """The distance gradient vanishes (equidistant point, plateau or interior)."""


class CapacityError(BallMPCError):
    """A requested grid exceeds the configured cell budget."""


class NotFreeError(BallMPCError, ValueError):
    """A ball center is not farther than the margin from the occupied set."""


class InfeasibleCenterError(BallMPCError, ValueError):
    """A collision-constraint center violates d(c) > margin at assembly time."""


class BarrierDomainError(BallMPCError, ValueError):
    """A log-barrier term was evaluated at a point with d(p) <= margin."""


class InfeasibleSeedError(BallMPCError):
    """Center repair could not find a free center for a knot point."""


class UnreachableGoalError(BallMPCError):
    """No grid path connects start and goal."""


class InitializationError(BallMPCError):
    """No usable initial guess could be produced."""


class NumericError(BallMPCError, FloatingPointError):
    """Non-finite values appeared in a model evaluation."""
