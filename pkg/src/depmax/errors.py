"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericAbort -> 4.
"""


class DepmaxError(Exception):
    """Base class for all package errors."""


class ShapeError(DepmaxError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(DepmaxError, ValueError):
    """Invalid configuration value, unknown key, or impossible geometry."""


class DataError(DepmaxError, ValueError):
    """Malformed input data (bad file, out-of-range label, missing row)."""


class FormatError(DataError):
    """A binary file failed magic/version/layout validation."""


class IntegrityError(DataError):
    """A binary file is truncated or internally inconsistent."""


class NumericAbort(DepmaxError, RuntimeError):
    """Training hit NaN/Inf and was aborted rather than masked."""
