"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4. Plain ValueError marks misuse of library functions.
"""


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


class DataError(Exception):
    """Malformed or inconsistent input data (parse and validation errors)."""


class NumericError(Exception):
    """Non-finite values encountered where finite math was required."""
