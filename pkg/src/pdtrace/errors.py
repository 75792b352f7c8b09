"""Exception hierarchy shared across the pipeline."""


class PdtraceError(Exception):
    """Base class for all errors raised by this package."""


class DataError(PdtraceError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LabelError(ParseError):
    pass


class SchemaError(ParseError):
    pass


class BalancingError(DataError):
    pass


class ConfigError(PdtraceError, ValueError):
    pass


class ShapeError(PdtraceError, ValueError):
    pass


class NumericError(PdtraceError, ArithmeticError):
    pass


class CheckpointError(PdtraceError, IOError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass
