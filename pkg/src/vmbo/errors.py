"""Exception hierarchy.

Each top-level class maps to one CLI exit code (see :mod:`vmbo.cli`).
"""


class VmboError(Exception):
    exit_code = 4


class ConfigError(VmboError, ValueError):
    """Invalid configuration, override key, or option value."""

    exit_code = 2


class DataError(VmboError, ValueError):
    """Malformed or inconsistent measurement data."""

    exit_code = 3


class SchemaError(DataError):
    pass


class DuplicateKeyError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class FailedMeasurementError(DataError, KeyError):
    """Lookup of a (workload, VM) pair that is declared failed."""

    def __str__(self):
        return Exception.__str__(self)


class EmptyInputError(VmboError, ValueError):
    exit_code = 3


class SyntheticSpecError(ConfigError):
    pass


class SearchError(VmboError, RuntimeError):
    """A search aborted. ``trace`` holds whatever was measured so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class FitError(SearchError):
    pass


class ModelStateError(VmboError, RuntimeError):
    """Prediction requested from a model that was never fitted."""


class ReplayError(VmboError):
    exit_code = 3


class ComparisonError(VmboError, ValueError):
    exit_code = 3
