"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ``DataError`` subclasses exit with 3,
``NumericalError`` subclasses with 4.
"""


class TribeGraphError(Exception):
    """Base class for every error raised by this package."""


class DataError(TribeGraphError):
    """Malformed or invalid input data."""


class MissingFile(DataError):
    def __init__(self, path):
        super().__init__(f"missing file: {path}")
        self.path = path


class ParseError(DataError):
    def __init__(self, file, line, reason):
        super().__init__(f"{file}:{line}: {reason}")
        self.file = file
        self.line = line


class InvariantViolation(DataError):
    pass


class DisconnectedTribe(InvariantViolation):
    pass


class BadConfig(DataError):
    pass


class TooFewLabels(DataError):
    pass


class EmptyMask(DataError):
    pass


class BadSegmentId(DataError):
    pass


class NoEdges(DataError):
    pass


class OneClassOnly(DataError):
    pass


class BatchTooSmall(DataError):
    pass


class NumericalError(TribeGraphError, ArithmeticError):
    """A computation produced a value outside its documented domain."""


class NoConvergence(NumericalError):
    def __init__(self, max_iter):
        super().__init__(f"power iteration did not converge in {max_iter} iterations")
        self.max_iter = max_iter


class NonFiniteError(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    pass


class BadProbability(NumericalError):
    pass


class ShapeMismatch(TribeGraphError, ValueError):
    pass


class WidthMismatch(ShapeMismatch):
    pass


class NonScalarLoss(TribeGraphError, ValueError):
    pass


class BadRate(TribeGraphError, ValueError):
    pass
