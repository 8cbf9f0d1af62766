"""Exception types shared across the pipeline."""


class FudaError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(FudaError):
    """Invalid configuration value or combination."""


class ShapeError(FudaError):
    """Array dimensions incompatible with the requested operation."""


class DataLayoutError(FudaError):
    """Dataset directory or file does not match the documented layout."""


class CheckpointError(FudaError):
    """Checkpoint file malformed or inconsistent with the given config."""


class AscentAborted(FudaError):
    """Adversarial style-code update hit a non-finite gradient; caller should resample."""
