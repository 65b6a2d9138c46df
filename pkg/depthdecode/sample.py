"""Define the stimulus, fMRI and voxel-region data model."""
from dataclasses import dataclass, field
from enum import Enum
import logging
from typing import Dict, FrozenSet, List, Mapping, Sequence, Tuple, Union

import numpy as np
import torch

from .const import (
    HVC_REGIONS,
    LVC_REGIONS,
    REGION_SET_ALL,
    REGION_SET_HVC,
    REGION_SET_LVC,
    REGIONS,
)
from .errors import ChannelModeError, ConsistencyError, EmptyRegionError

_LOGGER = logging.getLogger(__name__)


class ChannelMode(str, Enum):
    """Define the stimulus channel layouts."""

    DEPTH = "d"
    RGB = "rgb"
    RGBD = "rgbd"

    @property
    def channels(self) -> int:
        """Return the number of raster channels for this mode."""
        return {"d": 1, "rgb": 3, "rgbd": 4}[self.value]

    @property
    def has_depth(self) -> bool:
        """Return whether rasters of this mode carry a depth channel."""
        return self is not ChannelMode.RGB

    @classmethod
    def for_channels(cls, channels: int) -> "ChannelMode":
        """Return the mode holding `channels` channels."""
        for mode in cls:
            if mode.channels == channels:
                return mode
        raise ChannelModeError(f"No channel mode has {channels} channels")


def select_channels(
    raster: torch.Tensor, source: ChannelMode, target: ChannelMode
) -> torch.Tensor:
    """Project a (..., C, H, W) raster of mode `source` onto mode `target`.

    The depth channel is always last in RGBD rasters, color channels first.
    """
    source, target = ChannelMode(source), ChannelMode(target)
    if raster.shape[-3] != source.channels:
        raise ChannelModeError(
            f"Raster has {raster.shape[-3]} channels, mode {source.value} "
            f"expects {source.channels}"
        )
    if source is target:
        return raster
    if source is ChannelMode.RGBD and target is ChannelMode.DEPTH:
        return raster[..., 3:4, :, :]
    if source is ChannelMode.RGBD and target is ChannelMode.RGB:
        return raster[..., :3, :, :]
    raise ChannelModeError(
        f"Cannot derive a {target.value} raster from a {source.value} raster"
    )


@dataclass(frozen=True)
class RgbdSample:
    """Define a stimulus raster of shape C x H x W with values in [0, 1]."""

    raster: torch.Tensor
    mode: ChannelMode

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", ChannelMode(self.mode))
        if self.raster.dim() != 3:
            raise ChannelModeError(
                f"Raster must be C x H x W, got shape {tuple(self.raster.shape)}"
            )
        if self.raster.shape[0] != self.mode.channels:
            raise ChannelModeError(
                f"Mode {self.mode.value} expects {self.mode.channels} channels, "
                f"raster has {self.raster.shape[0]}"
            )
        if not bool(torch.isfinite(self.raster).all()):
            raise ConsistencyError("Raster holds non-finite values")
        if self.raster.numel() and (
            float(self.raster.min()) < 0.0 or float(self.raster.max()) > 1.0
        ):
            raise ConsistencyError("Raster values must lie within [0, 1]")

    @property
    def channels(self) -> int:
        """Return the channel count."""
        return self.raster.shape[0]

    @property
    def resolution(self) -> Tuple[int, int]:
        """Return (H, W) in pixels."""
        return (self.raster.shape[1], self.raster.shape[2])

    @property
    def depth(self) -> torch.Tensor:
        """Return the 1 x H x W depth channel."""
        return select_channels(self.raster, self.mode, ChannelMode.DEPTH)

    def as_mode(self, mode: ChannelMode) -> "RgbdSample":
        """Return this sample projected onto another channel mode."""
        mode = ChannelMode(mode)
        return RgbdSample(select_channels(self.raster, self.mode, mode), mode)


@dataclass(frozen=True)
class FmriVector:
    """Define a voxel-activation vector with its aligned voxel ids."""

    values: torch.Tensor
    voxel_ids: Tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "voxel_ids", tuple(int(v) for v in self.voxel_ids))
        if self.values.dim() != 1:
            raise ConsistencyError(
                f"fMRI values must be a vector, got shape {tuple(self.values.shape)}"
            )
        if self.values.shape[0] != len(self.voxel_ids):
            raise ConsistencyError(
                f"{self.values.shape[0]} values but {len(self.voxel_ids)} voxel ids"
            )
        if len(set(self.voxel_ids)) != len(self.voxel_ids):
            raise ConsistencyError("Voxel ids must be unique")
        if not bool(torch.isfinite(self.values).all()):
            raise ConsistencyError("fMRI vector holds non-finite values")

    def __len__(self) -> int:
        return len(self.voxel_ids)

    def subset(self, voxel_ids: Sequence[int]) -> "FmriVector":
        """Return the vector restricted to `voxel_ids`, in that order."""
        position = {voxel: idx for idx, voxel in enumerate(self.voxel_ids)}
        index = torch.tensor([position[int(v)] for v in voxel_ids], dtype=torch.long)
        return FmriVector(self.values[index], tuple(voxel_ids))


@dataclass(frozen=True)
class PairedExample:
    """Define a stimulus with its recorded fMRI response."""

    stimulus: RgbdSample
    response: FmriVector
    item_id: str


@dataclass(frozen=True)
class UnpairedExample:
    """Define a stimulus without an fMRI recording."""

    stimulus: RgbdSample
    item_id: str


Example = Union[PairedExample, UnpairedExample]


@dataclass(frozen=True)
class VoxelMask:
    """Define the region label of every voxel."""

    region_labels: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        labels = {int(k): str(v) for k, v in self.region_labels.items()}
        unknown = {v for v in labels.values() if v not in REGIONS}
        if unknown:
            raise ConsistencyError(f"Unknown region labels {sorted(unknown)}")
        object.__setattr__(self, "region_labels", labels)

    @property
    def voxel_ids(self) -> List[int]:
        """Return every labelled voxel id in ascending order."""
        return sorted(self.region_labels)

    @property
    def lvc(self) -> FrozenSet[int]:
        """Return only those voxels in the lower visual cortex."""
        return frozenset(
            voxel for voxel, region in self.region_labels.items() if region in LVC_REGIONS
        )

    @property
    def hvc(self) -> FrozenSet[int]:
        """Return only those voxels in the higher visual cortex."""
        return frozenset(
            voxel for voxel, region in self.region_labels.items() if region in HVC_REGIONS
        )

    def select(self, region_set: str) -> List[int]:
        """Return the sorted voxel ids of `region_set` (ALL, LVC or HVC)."""
        if region_set == REGION_SET_ALL:
            selected = set(self.region_labels)
        elif region_set == REGION_SET_LVC:
            selected = set(self.lvc)
        elif region_set == REGION_SET_HVC:
            selected = set(self.hvc)
        else:
            raise EmptyRegionError(f"Unknown region set {region_set}")
        if not selected:
            raise EmptyRegionError(f"Region set {region_set} holds no voxels")
        return sorted(selected)

    def covers(self, voxel_ids: Sequence[int]) -> None:
        """Verify that every voxel in `voxel_ids` is labelled exactly once."""
        missing = set(int(v) for v in voxel_ids) - set(self.region_labels)
        if missing:
            raise ConsistencyError(
                "Voxels without region label", (str(v) for v in missing)
            )


def stack_stimuli(examples: Sequence[Example]) -> torch.Tensor:
    """Return the stimuli of `examples` as one N x C x H x W tensor."""
    return torch.stack([example.stimulus.raster for example in examples])


def stack_responses(examples: Sequence[PairedExample]) -> torch.Tensor:
    """Return the responses of `examples` as one N x V tensor."""
    return torch.stack([example.response.values for example in examples])


def voxel_counts(examples: Sequence[PairedExample]) -> Dict[str, int]:
    """Return the voxel count of every paired item."""
    return {example.item_id: len(example.response) for example in examples}


def as_float_tensor(array: np.ndarray) -> torch.Tensor:
    """Return a float32 tensor that owns a copy of `array`."""
    return torch.from_numpy(np.array(array, dtype=np.float32, copy=True))
