"""Exception hierarchy shared across the package.

The CLI maps each family to its own exit code, so new errors should derive
from one of the three leaf families below.
"""


class MicroExitError(Exception):
    pass


class ConfigError(MicroExitError, ValueError):
    """Invalid configuration, parameters or missing prerequisites."""


class DataError(MicroExitError, ValueError):
    """Malformed or inconsistent input data."""


class ShapeError(DataError):
    pass


class NumericalError(MicroExitError, ArithmeticError):
    """Training or inference produced non-finite values."""
