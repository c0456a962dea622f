"""Exception types shared across the package."""


class SlotSceneError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(SlotSceneError, ValueError):
    """Array dimensions incompatible with the operation or config."""


class ValidationError(SlotSceneError, ValueError):
    """Input data or on-disk artifact violates a documented invariant."""


class ConfigError(ValidationError):
    """Bad or missing configuration value."""


class MissingFeatureError(SlotSceneError, KeyError):
    """A frame id has no entry in the feature cache."""

    def __init__(self, frame_id: str):
        super().__init__(frame_id)
        self.frame_id = frame_id

    def __str__(self) -> str:
        return f"feature cache has no entry for frame id {self.frame_id!r}"


class FingerprintMismatchError(ValidationError):
    """Policy/encoder/config fingerprints do not line up."""


class TrainingDivergedError(SlotSceneError, RuntimeError):
    """Loss became non-finite; carries a diagnostic snapshot."""

    def __init__(self, message: str, epoch: int, batch: int, param_norms: dict):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.param_norms = param_norms

    def __str__(self) -> str:
        norms = ", ".join(f"{k}={v:.4g}" for k, v in self.param_norms.items())
        return f"{self.args[0]} (epoch={self.epoch}, batch={self.batch}, param norms: {norms})"
