"""Read and write rasters, fMRI vectors and voxel tables."""
import logging
from pathlib import Path
import struct
from typing import Dict, Tuple, Union

import numpy as np
import pandas as pd
from PIL import Image, UnidentifiedImageError
import torch

from .const import FMRI_MAGIC, RASTER_MAGIC, VOXEL_TABLE_COLUMNS
from .errors import DatasetFormatError

_LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]

_RASTER_HEADER = struct.Struct("<4sIII")
_FMRI_HEADER = struct.Struct("<4sI")


def write_raster(path: PathLike, raster: torch.Tensor) -> None:
    """Write a C x H x W raster as magic + u32 C, H, W + float32 row-major."""
    array = raster.detach().cpu().numpy().astype("<f4")
    if array.ndim != 3:
        raise DatasetFormatError(path, f"expected a 3-d raster, got {array.ndim}-d")
    header = _RASTER_HEADER.pack(RASTER_MAGIC, *array.shape)
    Path(path).write_bytes(header + array.tobytes(order="C"))


def read_raster(path: PathLike) -> torch.Tensor:
    """Read a raster written by `write_raster`."""
    payload = _read_bytes(path)
    if len(payload) < _RASTER_HEADER.size:
        raise DatasetFormatError(path, "truncated header")
    magic, channels, height, width = _RASTER_HEADER.unpack_from(payload)
    if magic != RASTER_MAGIC:
        raise DatasetFormatError(path, f"bad magic {magic!r}")
    count = channels * height * width
    body = payload[_RASTER_HEADER.size :]
    if len(body) != 4 * count:
        raise DatasetFormatError(
            path, f"header declares {count} values, body holds {len(body) // 4}"
        )
    array = np.frombuffer(body, dtype="<f4").reshape(channels, height, width)
    return torch.from_numpy(array.astype(np.float32))


def write_fmri(path: PathLike, values: torch.Tensor) -> None:
    """Write an fMRI vector as magic + u32 V + V float32."""
    array = values.detach().cpu().numpy().astype("<f4").reshape(-1)
    Path(path).write_bytes(_FMRI_HEADER.pack(FMRI_MAGIC, array.shape[0]) + array.tobytes())


def read_fmri(path: PathLike) -> torch.Tensor:
    """Read an fMRI vector written by `write_fmri`."""
    payload = _read_bytes(path)
    if len(payload) < _FMRI_HEADER.size:
        raise DatasetFormatError(path, "truncated header")
    magic, count = _FMRI_HEADER.unpack_from(payload)
    if magic != FMRI_MAGIC:
        raise DatasetFormatError(path, f"bad magic {magic!r}")
    body = payload[_FMRI_HEADER.size :]
    if len(body) != 4 * count:
        raise DatasetFormatError(
            path, f"header declares {count} voxels, body holds {len(body) // 4}"
        )
    return torch.from_numpy(np.frombuffer(body, dtype="<f4").astype(np.float32))


def read_png(path: PathLike) -> torch.Tensor:
    """Read a PNG as a 3 x H x W raster in [0, 1]."""
    try:
        with Image.open(path) as image:
            array = np.asarray(image.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, UnidentifiedImageError) as err:
        raise DatasetFormatError(path, str(err)) from err
    return torch.from_numpy(array.transpose(2, 0, 1).copy())


def write_png(path: PathLike, raster: torch.Tensor) -> None:
    """Write a 3 x H x W raster in [0, 1] as an 8-bit PNG."""
    array = raster.detach().cpu().clamp(0.0, 1.0).numpy().transpose(1, 2, 0)
    Image.fromarray(np.round(array * 255.0).astype(np.uint8), mode="RGB").save(path)


def read_voxel_table(path: PathLike) -> Tuple[Tuple[int, ...], Dict[int, str]]:
    """Read the row-index -> (voxel_id, region) table.

    Returns:
        Tuple of voxel ids in row order and the voxel id -> region mapping.
    """
    try:
        table = pd.read_csv(path, dtype={"voxel_id": "int64", "region": "string"})
    except (OSError, ValueError, pd.errors.ParserError) as err:
        raise DatasetFormatError(path, str(err)) from err
    if tuple(table.columns) != VOXEL_TABLE_COLUMNS:
        raise DatasetFormatError(
            path, f"header must be {','.join(VOXEL_TABLE_COLUMNS)}, got {','.join(table.columns)}"
        )
    if table["voxel_id"].duplicated().any():
        raise DatasetFormatError(path, "voxel ids repeat")
    voxel_ids = tuple(int(v) for v in table["voxel_id"])
    regions = {int(v): str(r) for v, r in zip(table["voxel_id"], table["region"])}
    return voxel_ids, regions


def write_voxel_table(path: PathLike, voxel_ids, regions: Dict[int, str]) -> None:
    """Write the voxel table in row order."""
    table = pd.DataFrame(
        {
            "voxel_id": [int(v) for v in voxel_ids],
            "region": [regions[int(v)] for v in voxel_ids],
        }
    )
    table.to_csv(path, index=False, lineterminator="\n")


def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as err:
        raise DatasetFormatError(path, str(err)) from err
