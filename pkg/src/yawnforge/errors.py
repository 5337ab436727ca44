"""Exception hierarchy shared across the pipeline stages."""


class YawnforgeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(YawnforgeError):
    """Invalid configuration: unknown keys, bad values, or missing backends."""


class VideoDecodeError(YawnforgeError):
    """A source video could not be opened or decoded."""


class ManifestError(YawnforgeError):
    """Corpus manifest inconsistency, e.g. duplicate video ids."""


class InputImageError(YawnforgeError):
    """An image input is unreadable, empty, or has zero area."""


class BackendError(YawnforgeError):
    """A detector/mesh backend violated its adapter contract."""


class DegenerateLipExtentError(YawnforgeError):
    """Lip landmarks have zero width or height; the frame needs human review."""

    def __init__(self, message: str, frame_id: str | None = None):
        super().__init__(message)
        self.frame_id = frame_id


class DatasetError(YawnforgeError):
    """Training dataset does not satisfy the preconditions (e.g. single class)."""


class TrainingDivergedError(YawnforgeError):
    """Loss became non-finite; carries the last finite model state."""

    def __init__(self, message: str, artifact=None):
        super().__init__(message)
        self.artifact = artifact


class StoreError(YawnforgeError):
    """Annotation store misuse: unknown batch/frame, bad decision sets."""


class BatchCoverageError(StoreError):
    """A decision set does not cover the batch exactly."""

    def __init__(self, message: str, missing=(), unknown=()):
        super().__init__(message)
        self.missing = sorted(missing)
        self.unknown = sorted(unknown)


class BatchConflictError(StoreError):
    """Batch already submitted with different decisions, or lock owned elsewhere."""


class NothingVerifiedError(StoreError):
    """An operation requires at least one verified annotation."""


class ExportError(YawnforgeError):
    """Dataset export cannot proceed (e.g. nothing to export)."""
