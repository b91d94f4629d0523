"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
DivergenceError -> 4. Everything else is a programming error.
"""


class MagphaseError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(MagphaseError, ValueError):
    """An argument violates a documented precondition."""


class ShapeError(InvalidArgumentError):
    """Array shapes are incompatible with the requested operation."""


class NumericsError(MagphaseError, ArithmeticError):
    """A value left the numerical domain an operation supports."""


class ConfigError(MagphaseError):
    """A configuration is inconsistent or missing a prerequisite."""


class DataError(MagphaseError):
    """An input file or dataset is malformed or missing."""


class DivergenceError(MagphaseError):
    """Training produced non-finite losses or gradients."""
