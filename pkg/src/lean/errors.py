"""Exception types shared across the package."""


class LeanError(Exception):
    """Base class for all package errors."""


class DimensionError(LeanError, ValueError):
    """Shapes of operands do not agree."""


class DomainError(LeanError, ValueError):
    """Value outside the mathematical domain of an operation."""


class ConfigError(LeanError, ValueError):
    """Invalid or inconsistent configuration."""


class ContractError(LeanError, RuntimeError):
    """An API precondition was violated."""


class NumericError(LeanError, FloatingPointError):
    """NaN/Inf where a finite value is required."""


class LoadError(LeanError, ValueError):
    """A file could not be parsed or does not match expectations."""
