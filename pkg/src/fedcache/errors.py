"""Exception hierarchy shared across the package.

Each class maps to a distinct CLI exit code (see ``fedcache.cli``).
"""


class FedcacheError(Exception):
    """Base class for all package errors."""


class DataError(FedcacheError):
    """Malformed or inconsistent input data (carries file/line context)."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc += ": "
        super().__init__(loc + message)
        self.path = path
        self.line = line


class ConfigError(FedcacheError):
    """Unknown key, unparsable value, or invalid configuration."""


class TrainingDivergedError(FedcacheError):
    """Local training produced a non-finite loss or parameter."""


class AggregationError(FedcacheError):
    """Invalid client updates handed to the aggregation rule."""
