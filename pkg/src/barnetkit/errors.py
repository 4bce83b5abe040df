"""Exception types shared across the package."""


class BarnetError(Exception):
    """Base class for all package errors."""


class DimensionError(BarnetError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigError(BarnetError):
    """A configuration value is missing, unknown, or out of range."""


class DataError(BarnetError):
    """Input data violates a contract (e.g. out-of-range class label)."""


class ParseError(BarnetError):
    """A file could not be parsed; message names the byte offset."""


class NumericError(BarnetError):
    """An operation produced NaN or Inf; message names the offending op."""
