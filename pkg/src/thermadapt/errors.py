"""Exception types shared across the package."""


class ThermadaptError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(ThermadaptError, ValueError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigError(ThermadaptError, ValueError):
    """Invalid configuration value (filter spec, training config, ...)."""


class WireFormatError(ThermadaptError, ValueError):
    """Malformed wire payload; the frame is rejected, not fatal."""


class DatasetFormatError(ThermadaptError, ValueError):
    """Dataset file is corrupt, truncated or of an unsupported version."""


class CheckpointFormatError(ThermadaptError, ValueError):
    """Checkpoint file is corrupt or does not match the architecture."""


class TrainingDiverged(ThermadaptError, RuntimeError):
    """Loss became non-finite; training aborted."""
