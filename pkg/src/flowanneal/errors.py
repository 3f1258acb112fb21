"""Exception types shared across the package."""


class FlowAnnealError(Exception):
    """Base class for package-specific failures."""


class InputValidationError(FlowAnnealError, ValueError):
    """Malformed input: non-finite values, bad shapes, bad config values."""


class NonFiniteValueError(FlowAnnealError, FloatingPointError):
    """A conditioner network produced a non-finite output."""


class DegenerateWeightsError(FlowAnnealError, ValueError):
    """Importance weights are all zero (or otherwise unusable)."""


class UndefinedEssError(FlowAnnealError, ValueError):
    """Effective sample size is undefined (zero-variance or empty input)."""


class ScheduleStallError(FlowAnnealError, RuntimeError):
    """Annealing made no progress for the configured number of batches.

    Carries the partial run result (if any) in ``result``.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class TrainingDivergedError(FlowAnnealError, RuntimeError):
    """Gradients or parameters became non-finite during training."""


class InsufficientLadderError(FlowAnnealError, ValueError):
    """Too few usable ladder points remain for thermodynamic integration."""


class ConfigError(FlowAnnealError, ValueError):
    """Run configuration failed validation."""
