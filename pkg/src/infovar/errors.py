"""Exception hierarchy shared by every module."""


class InfovarError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""


class InvalidInput(InfovarError, ValueError):
    """Malformed input: shapes, signs, grids or matrices that violate a precondition."""


class AllZero(InvalidInput):
    pass


class NegativeEntry(InvalidInput):
    pass


class ShapeMismatch(InvalidInput):
    pass


class GridMismatch(InvalidInput):
    pass


class DimensionMismatch(InvalidInput):
    pass


class BadSupport(InvalidInput):
    pass


class NotPSD(InvalidInput):
    pass


class NoisePDViolation(InvalidInput):
    pass


class SingularCovariance(InvalidInput):
    pass


class SingularInnerMatrix(InvalidInput):
    pass


class SupportMismatch(InvalidInput):
    pass


class InfeasibleConstraints(InvalidInput):
    pass


class InfeasibleBound(InvalidInput):
    pass


class InfeasibleR(InvalidInput):
    pass


class InfeasibleCandidate(InvalidInput):
    pass


class TruncationError(InfovarError):
    """Too much probability mass would fall outside the grid."""


class NonConvergence(InfovarError):
    """An iterative routine hit its iteration cap without meeting its tolerances."""


class TiltFailure(NonConvergence):
    pass


class ReductionFailure(InfovarError):
    pass
