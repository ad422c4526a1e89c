"""Exception types shared across the package."""


class TargetedRiskError(Exception):
    """Base class for all package errors."""


class DataError(TargetedRiskError):
    """Malformed or inconsistent input data (bad rows, domain violations)."""


class PositivityError(TargetedRiskError):
    """A positivity bound was violated where it cannot be truncated away.

    Raised when an event-free survival value needed in a clever-covariate
    denominator falls below the configured floor, or when a required risk
    set is empty.
    """


class ConfigError(TargetedRiskError):
    """Invalid configuration or CLI arguments."""
