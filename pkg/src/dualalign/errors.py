"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericalError -> 3. Plain ValueError/TypeError indicate caller bugs.
"""


class ConfigError(Exception):
    """Bad configuration file or command-line usage."""


class DataError(Exception):
    """Missing, malformed, or inconsistent on-disk data."""


class NumericalError(Exception):
    """Non-finite values or a failed numerical check."""
