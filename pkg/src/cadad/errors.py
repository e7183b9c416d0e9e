"""Exception types shared across the package."""


class CadadError(Exception):
    """Base class for package errors."""


class ConfigError(CadadError):
    """Invalid configuration value, schema violation, or unknown key."""


class ContractError(CadadError):
    """An operation was called with arguments violating its preconditions."""


class NumericsError(CadadError):
    """Non-finite values where finite ones are required (loss, gradients)."""


class EventFileError(CadadError):
    """Malformed event file; message carries the offending line number."""
