from __future__ import annotations


class XmocoError(Exception):
    """Base class for every error raised by xmoco."""


class ShapeError(XmocoError, ValueError):
    """Raised when tensor shapes do not conform."""


class NonFiniteError(XmocoError, ValueError):
    """Raised when a NaN or an infinity shows up where only finite values are allowed."""


class DegenerateEmbeddingError(XmocoError, ValueError):
    """Raised when a vector is too close to zero to be normalized."""

    def __init__(self, message: str, index: int | None = None) -> None:
        super().__init__(message)
        self.index = index


class ConfigError(XmocoError, ValueError):
    """Raised for invalid or unknown configuration values."""


class DatasetFormatError(XmocoError, ValueError):
    """Raised when a pair file is malformed."""


class EmptyDatasetError(XmocoError, ValueError):
    """Raised when a dataset (or a required split of it) has no pairs."""


class CheckpointFormatError(XmocoError, ValueError):
    """Raised when a checkpoint file cannot be decoded."""


class IndexBuildError(XmocoError, ValueError):
    """Raised when retrieval-index input violates its invariants."""


class MetricInputError(XmocoError, ValueError):
    """Raised when metric input is out of range or incomplete."""


class TrainingStepError(XmocoError, RuntimeError):
    """Raised when a training step fails; carries the global step index."""

    def __init__(self, step: int, cause: Exception) -> None:
        super().__init__(f"Training failed at step {step}: {cause}")
        self.step = step
        self.cause = cause


class InvalidArgumentError(XmocoError, ValueError):
    """Raised when an argument violates an operation's precondition."""


class RequestError(XmocoError, ValueError):
    """Raised for a service request that cannot be served (answered with 400)."""
