"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class ContractViolation(ValueError):
    """A caller broke an operation's precondition."""


class TrainingError(RuntimeError):
    """Numerical failure during learning (non-finite loss or gradient)."""


class ChainSizeError(RuntimeError):
    """Truncated chain would exceed the configured state limit."""


class MultiClassError(RuntimeError):
    """Truncated chain has more than one closed communicating class."""

    def __init__(self, message, components=None):
        super().__init__(message)
        self.components = components or []


class AlignmentError(RuntimeError):
    """Trial files being aggregated do not share a window grid."""
