"""Define exceptions."""
from typing import Dict, Iterable, Optional


class DepthDecodeError(Exception):
    """Define a base exception."""

    pass


class ConfigError(DepthDecodeError):
    """Define an exception related to an invalid configuration."""

    pass


class DatasetFormatError(DepthDecodeError):
    """Define an exception related to a malformed raster, fMRI or table file."""

    def __init__(self, path, reason: str) -> None:
        super().__init__(f"Malformed file {path}: {reason}")
        self.path = path


class ConsistencyError(DepthDecodeError):
    """Define an exception related to items that disagree with the dataset."""

    def __init__(self, message: str, items: Iterable[str] = ()) -> None:
        self.items = sorted(items)
        if self.items:
            message = f"{message}: {', '.join(self.items)}"
        super().__init__(message)


class ChannelModeError(DepthDecodeError):
    """Define an exception related to mismatched channel modes or shapes."""

    pass


class SceneSpecError(DepthDecodeError):
    """Define an exception related to an invalid scene description."""

    pass


class MissingDepthError(DepthDecodeError):
    """Define an exception related to images without a depth raster."""

    def __init__(self, stems: Iterable[str]) -> None:
        self.stems = sorted(stems)
        super().__init__(f"No depth raster for: {', '.join(self.stems)}")


class TrainingDivergedError(DepthDecodeError):
    """Define an exception related to a non-finite training loss."""

    def __init__(
        self,
        message: str,
        diagnostics: Optional[Dict] = None,
        checkpoint: Optional[str] = None,
    ) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics or {}
        self.checkpoint = checkpoint


class EncoderMutationError(DepthDecodeError):
    """Define an exception related to a frozen encoder that changed."""

    pass


class LossBoundsError(DepthDecodeError):
    """Define an exception related to a loss term outside its range."""

    pass


class InsufficientPoolError(DepthDecodeError):
    """Define an exception related to a candidate pool that is too small."""

    def __init__(self, required: int, available: int) -> None:
        super().__init__(
            f"Candidate pool holds {available} items but {required} are required"
        )
        self.required = required
        self.available = available


class DuplicateCandidateError(DepthDecodeError):
    """Define an exception related to repeated candidate ids."""

    pass


class InsufficientVoxelsError(DepthDecodeError):
    """Define an exception related to too few comparable voxels."""

    pass


class EmptyRegionError(DepthDecodeError):
    """Define an exception related to a region set without voxels."""

    pass


class OutputExistsError(DepthDecodeError):
    """Define an exception related to refusing to overwrite output."""

    pass


class CheckpointError(DepthDecodeError):
    """Define an exception related to missing or incompatible checkpoints."""

    pass


class ResumeMismatchError(DepthDecodeError):
    """Define an exception related to resuming a run whose inputs changed."""

    pass
