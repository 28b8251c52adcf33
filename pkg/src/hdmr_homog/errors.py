"""Exception hierarchy shared by all solvers."""


class HomogError(Exception):
    """Base class for computational failures (CLI exit code 1)."""


class SingularTensor(HomogError):
    pass


class NonPositiveJacobian(HomogError):
    """Raised when det(F) <= 0 at a material point.

    ``location`` carries the voxel index, element/quadrature pair or
    whatever identifies the offending point for the caller.
    """

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class NewtonDiverged(HomogError):
    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class CgStalled(HomogError):
    pass


class RootFindFailed(HomogError):
    pass


class RejectionOverflow(HomogError):
    pass


class TrainingDiverged(HomogError):
    pass


class InsufficientData(HomogError):
    pass


class FormatError(HomogError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
