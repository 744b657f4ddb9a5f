"""Exception hierarchy shared by all modules."""


class CoxVAEError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(CoxVAEError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(CoxVAEError, ValueError):
    """An input lies outside the domain of a function (e.g. log of 0)."""


class ContractError(CoxVAEError, RuntimeError):
    """A calling contract was violated (e.g. backward on a non-scalar)."""


class ConfigError(CoxVAEError, ValueError):
    """Invalid configuration value. ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class FormatError(CoxVAEError, ValueError):
    """A file did not match its declared binary or text format."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(CoxVAEError, RuntimeError):
    """Numerical failure during training.

    ``checkpoint`` holds the last good model state (if any) and ``step``
    the step at which the failure was detected.
    """

    def __init__(self, message, step=None, checkpoint=None, param=None):
        super().__init__(message)
        self.step = step
        self.checkpoint = checkpoint
        self.param = param


class UndefinedMetricError(CoxVAEError, ValueError):
    """A metric has no defined value for the given input."""


class WeightError(CoxVAEError, ValueError):
    """An inverse-probability weight would be infinite."""
