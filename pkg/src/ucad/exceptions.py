class UCADError(Exception):
    """Base class for package errors."""


class ShapeError(UCADError, ValueError):
    pass


class ParameterError(UCADError, ValueError):
    pass


class ConfigError(UCADError, ValueError):
    pass


class DataError(UCADError, OSError):
    pass


class PGMParseError(DataError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class TrainingError(UCADError, RuntimeError):
    """Raised when a loss or gradient becomes non-finite."""
