"""Error taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError and UsageError exit with 2,
NumericalError with 3.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad file, unknown key, out-of-range value."""


class UsageError(ValueError):
    """An API call that violates a documented precondition."""


class NumericalError(RuntimeError):
    """Non-finite values where finite ones are required (NaN gradients etc.)."""
