"""Exception hierarchy shared by all modules."""


class ReggeError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(ReggeError):
    """Input data fails a geometric or combinatorial precondition."""


class SolverError(ReggeError):
    """A numerical solver did not produce an acceptable answer."""


class NotRealizable(ValidationError):
    pass


class Degenerate(ValidationError):
    pass


class FacetMismatch(ValidationError):
    pass


class OutOfDomain(ValidationError):
    pass


class OutOfConvexBall(ValidationError):
    pass


class SingularSystem(ValidationError):
    pass


class SpreadFailure(ValidationError):
    pass


class BadRange(ValidationError):
    pass


class NonManifoldStar(ValidationError):
    pass


class NonOrientable(ValidationError):
    pass


class NonTransverse(ValidationError):
    pass


class SkeletonCollision(ValidationError):
    pass


class LeftRegion(ValidationError):
    pass


class UnknownManifold(ValidationError):
    pass


class LeftDomain(SolverError):
    pass


class StepFailure(SolverError):
    pass


class NoConvergence(SolverError):
    pass


class ConsistencyError(SolverError):
    """Two independent computations of the same quantity disagree."""
