"""Exception types raised across the package."""


class RLNetError(ValueError):
    """Base class for all package errors."""


class ConfigError(RLNetError):
    """Invalid configuration: bad kernel size, divisibility, unknown key..."""


class ContractError(RLNetError):
    """Arguments violate an operation's pre-conditions (shape, scale, mode)."""


class InputError(RLNetError):
    """User-supplied data cannot be processed as given."""
