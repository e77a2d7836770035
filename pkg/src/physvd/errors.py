"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called with arguments outside its contract."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class FormatError(ValueError):
    """A container file is malformed."""


class NumericalError(RuntimeError):
    """A numerical kernel failed (singular factor, non-finite values, ...)."""
