"""Exception types raised across the package."""


class TopoTrajError(Exception):
    """Base class for all package errors."""


class InvalidEnvironment(TopoTrajError, ValueError):
    pass


class BoundaryViolation(TopoTrajError, ValueError):
    """A full trajectory does not start and end on the environment boundary."""


class EmptyCorpus(TopoTrajError, ValueError):
    pass


class DegenerateData(TopoTrajError, ValueError):
    """Fewer data points than requested mixture components."""


class SingularCovariance(TopoTrajError, ArithmeticError):
    pass


class NumericalFailure(TopoTrajError, ArithmeticError):
    """A matrix that must be symmetric positive definite is not."""


class AllZeroWeights(TopoTrajError, ArithmeticError):
    pass


class MissingColumn(TopoTrajError, KeyError):
    pass


class EmptyFile(TopoTrajError, ValueError):
    pass


class Disconnected(TopoTrajError, RuntimeError):
    """No grid path exists between sampled endpoints."""


class IndexMismatch(TopoTrajError, ValueError):
    pass
