"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericError -> 3.
"""


class ConfigError(ValueError):
    """Invalid configuration, shapes, or API usage."""


class DataError(ValueError):
    """Missing, malformed, or insufficient input data."""


class NumericError(ArithmeticError):
    """Non-finite values encountered during optimization."""
