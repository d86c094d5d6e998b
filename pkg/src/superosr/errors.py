"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, I/O problems -> 2,
verification failures -> 3.
"""


class ConfigError(Exception):
    """Invalid configuration: bad key, bad value, incompatible field combo."""


class InputError(ValueError):
    """Caller passed data that violates an operation's preconditions."""


class DataFormatError(InputError):
    """On-disk bytes do not match the declared binary format."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values or has no defined result."""


class DegenerateTailError(InputError):
    """Weibull tail fit is undefined (zero-variance tail)."""


class StratificationError(InputError):
    """A known class is missing from a batch that requires full coverage."""
