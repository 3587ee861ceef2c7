"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class SvemkitError(Exception):
    """Base class for all package errors."""


class ConfigError(SvemkitError):
    """Invalid configuration: bad option values, malformed config files."""


class DataError(SvemkitError):
    """Invalid data: missing columns, unseen levels, non-finite values."""


class NumericError(SvemkitError):
    """Numeric failure: degenerate inputs, exhausted sampling budgets."""
