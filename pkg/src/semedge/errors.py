"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SemEdgeError(Exception):
    exit_code = 1


class ConfigError(SemEdgeError):
    """Bad shapes, bad options, inconsistent configuration."""

    exit_code = 2


class UsageError(ConfigError):
    """API called out of order (e.g. an optimizer step with too few accumulations)."""


class DataError(SemEdgeError):
    """Malformed or mismatched input files, labels out of range."""

    exit_code = 3


class NumericError(SemEdgeError):
    """NaN or Inf produced by a forward or backward pass."""

    exit_code = 4
