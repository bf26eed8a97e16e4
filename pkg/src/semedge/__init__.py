"""Category-aware semantic edge detection at desk scale."""

from semedge.errors import ConfigError, DataError, NumericError, SemEdgeError, UsageError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "NumericError", "SemEdgeError", "UsageError"]
