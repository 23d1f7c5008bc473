"""Exception hierarchy shared by every module."""


class CTDSError(Exception):
    """Base class for package errors."""


class ConfigurationError(CTDSError, ValueError):
    """Invalid configuration, shape mismatch, or malformed input file."""


class ContractViolation(CTDSError, ValueError):
    """A caller broke an operation's precondition (e.g. an unavailable action)."""


class NumericError(CTDSError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class CheckpointError(ConfigurationError):
    """A checkpoint file is malformed or belongs to a different run."""
