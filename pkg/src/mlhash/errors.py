"""Exception types shared across the package."""


class MlhashError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(MlhashError, ValueError):
    """Operands have inconsistent shapes or lengths."""


class LabelError(MlhashError, ValueError):
    """Labels are out of range or of the wrong mode for the operation."""


class ConfigurationError(MlhashError, ValueError):
    """Model/variant/estimator combination or config value is invalid."""


class TrainingDivergenceError(MlhashError, ArithmeticError):
    """A loss or gradient became non-finite during optimization."""


class FormatError(MlhashError, ValueError):
    """A binary or CSV input file is malformed.

    Carries the byte offset at which decoding failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class OracleCapacityError(MlhashError, ValueError):
    """An enumeration-based helper was asked for more than it can afford."""
