"""Exception types shared across the package."""


class GrwalkError(Exception):
    """Base class for all package errors."""


class UsageError(GrwalkError):
    """Caller violated an interface contract (e.g. mixed-family operands)."""


class OutOfRangeError(GrwalkError):
    """Requested quantity lies beyond a computed cache or truncation."""


class ResourceCapError(GrwalkError):
    """A size or memory cap was exceeded; carries partial progress."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class HypothesisViolationError(GrwalkError):
    """A monotonicity or growth hypothesis failed on the evaluation grid."""


class TheoremInapplicableError(GrwalkError):
    """Parameters fall outside the range where a bound applies."""


class BoundVacuousError(GrwalkError):
    """An implicit-function inversion ran past its configured cap."""


class ConvergenceError(GrwalkError):
    """An iterative solver failed to converge; carries the best estimate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class TruncationError(GrwalkError):
    """A simulation touched the truncation boundary; the run is invalid."""
