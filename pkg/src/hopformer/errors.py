"""Exception types shared across the package.

The CLI maps :class:`ValidationError` subclasses to exit code 1 and
:class:`NumericalError` to exit code 2.
"""


class HopformerError(Exception):
    """Base class for all package errors."""


class ValidationError(HopformerError, ValueError):
    """Bad input: malformed files, inconsistent shapes, invalid config."""


class GraphFormatError(ValidationError):
    pass


class CacheError(ValidationError):
    """A token, encoding, or checkpoint file failed to parse or verify."""


class ShapeError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class NumericalError(HopformerError, ArithmeticError):
    """Non-finite values, eigensolver non-convergence, tolerance violations."""
