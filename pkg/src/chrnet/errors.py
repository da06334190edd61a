"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes (config 2, data 3, numerical 4).
"""


class ChrnetError(Exception):
    """Base class for all package errors."""


class ConfigError(ChrnetError):
    """Invalid or inconsistent configuration."""


class DataError(ChrnetError):
    """Broken, missing, or insufficient input data."""


class NumericalError(ChrnetError):
    """Non-finite values encountered during optimization."""
