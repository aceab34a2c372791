"""Exception hierarchy shared by all modules."""


class DrlPartError(Exception):
    pass


class DegeneratePartitionError(DrlPartError):
    """A part of a bisection or separator is empty where a metric needs it non-empty."""


class InvalidSeparatorError(DrlPartError):
    """An edge joins part A and part B of a three-way labeling."""


class EssentialNodeError(DrlPartError):
    pass


class DisconnectedGraphError(DrlPartError):
    pass


class DimensionError(DrlPartError):
    pass


class AllMaskedError(DrlPartError):
    pass


class CheckpointError(DrlPartError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class CorruptFileError(CheckpointError):
    pass


class MatrixMarketError(DrlPartError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NonSquareError(DrlPartError):
    pass
