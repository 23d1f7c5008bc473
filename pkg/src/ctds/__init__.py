"""Teacher/student value decomposition for cooperative multi-agent RL, on a numpy autodiff core."""

from .errors import CheckpointError, ConfigurationError, ContractViolation, CTDSError, NumericError

__version__ = "0.1.0"

__all__ = [
    "CTDSError",
    "CheckpointError",
    "ConfigurationError",
    "ContractViolation",
    "NumericError",
    "__version__",
]
