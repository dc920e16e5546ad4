"""Exception hierarchy shared by the library and the CLI."""


class ShoutcompError(Exception):
    """Base class for all errors raised by this package."""


class DataError(ShoutcompError, ValueError):
    """Invalid input data: bad dimensions, non-finite values, duplicates."""


class ModelFormatError(ShoutcompError, ValueError):
    """A model file has the wrong version, kind or layout."""


class NumericalError(ShoutcompError, ArithmeticError):
    """A numerical procedure failed (non-finite values, divergence)."""
