"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with inputs that violate its preconditions."""


class ConfigError(ValueError):
    """A config file is missing, malformed, or inconsistent."""


class TrainingFailure(RuntimeError):
    """A training run produced a non-finite loss or otherwise diverged."""


class EvaluationFailure(RuntimeError):
    """An evaluation run could not be completed."""


class FrozenModelError(RuntimeError):
    """A parameter update was attempted on a frozen network."""


class CheckpointError(ValueError):
    """A checkpoint file is corrupt or has an unsupported format."""
