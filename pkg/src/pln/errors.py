"""Exception hierarchy shared by the library and the command line."""


class PlnError(Exception):
    """Base class for all errors raised by :mod:`pln`."""


class ConfigError(PlnError, ValueError):
    """Invalid parameter or configuration value."""


class DataError(PlnError, ValueError):
    """Malformed, missing or incompatible data."""


class NumericalError(PlnError, ArithmeticError):
    """Non-finite values or a failed factorization."""


class ModelFormatError(PlnError):
    """Model file has a bad magic number, unknown version or is corrupted."""
