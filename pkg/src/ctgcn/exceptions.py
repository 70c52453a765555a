"""Exception hierarchy shared across the package."""


class CtgcnError(Exception):
    """Base class for all package errors."""


class DataError(CtgcnError, ValueError):
    """Malformed, missing or badly ordered input data.

    ``row`` and ``column`` are 1-based (data row, file column) when the
    error can be located in a file.
    """

    def __init__(self, message, row=None, column=None):
        if row is not None and column is not None:
            message = f"{message} at ({row},{column})"
        super().__init__(message)
        self.row = row
        self.column = column


class InsufficientDataError(DataError):
    pass


class ConfigError(CtgcnError, ValueError):
    def __init__(self, message, field=None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class StationarityError(CtgcnError, ValueError):
    pass


class DependencyError(CtgcnError):
    """A pipeline stage was run before the stage producing its input."""
