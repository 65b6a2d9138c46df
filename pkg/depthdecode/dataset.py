"""Load, validate, normalize and save stimulus/fMRI datasets."""
import asyncio
from collections import Counter
from dataclasses import dataclass, replace
import logging
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import torch

from .const import (
    FMRI_DIR,
    FMRI_SUFFIX,
    MAX_CONCURRENT_READS,
    PNG_SUFFIX,
    RASTER_SUFFIX,
    REGION_OTHER,
    SPLIT_PAIRED_TEST,
    SPLIT_PAIRED_TRAIN,
    SPLIT_UNPAIRED,
    VOXEL_TABLE,
)
from .errors import ChannelModeError, ConsistencyError, DatasetFormatError
from .fileio import (
    PathLike,
    read_fmri,
    read_png,
    read_raster,
    read_voxel_table,
    write_fmri,
    write_raster,
    write_voxel_table,
)
from .sample import (
    ChannelMode,
    FmriVector,
    PairedExample,
    RgbdSample,
    UnpairedExample,
    VoxelMask,
    select_channels,
)

_LOGGER = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass(frozen=True)
class DatasetSplits:
    """Define the three validated collections of a dataset root."""

    paired_train: Tuple[PairedExample, ...]
    paired_test: Tuple[PairedExample, ...]
    unpaired: Tuple[UnpairedExample, ...]
    mask: VoxelMask
    mode: ChannelMode

    @property
    def voxel_ids(self) -> Tuple[int, ...]:
        """Return the dataset-wide voxel ids in file row order."""
        for example in self.paired_train + self.paired_test:
            return example.response.voxel_ids
        return tuple(self.mask.voxel_ids)

    @property
    def sizes(self) -> Tuple[int, int, int]:
        """Return (paired-train, paired-test, unpaired) item counts."""
        return (len(self.paired_train), len(self.paired_test), len(self.unpaired))

    def as_mode(self, mode: ChannelMode) -> "DatasetSplits":
        """Return the dataset with every stimulus projected onto `mode`."""
        mode = ChannelMode(mode)
        return DatasetSplits(
            paired_train=tuple(_project(e, mode) for e in self.paired_train),
            paired_test=tuple(_project(e, mode) for e in self.paired_test),
            unpaired=tuple(_project(e, mode) for e in self.unpaired),
            mask=self.mask,
            mode=mode,
        )

    def restrict_voxels(self, voxel_ids: Sequence[int]) -> "DatasetSplits":
        """Return the dataset with responses restricted to `voxel_ids`."""
        keep = set(voxel_ids)
        return DatasetSplits(
            paired_train=tuple(
                replace(e, response=e.response.subset(voxel_ids)) for e in self.paired_train
            ),
            paired_test=tuple(
                replace(e, response=e.response.subset(voxel_ids)) for e in self.paired_test
            ),
            unpaired=self.unpaired,
            mask=VoxelMask(
                {v: r for v, r in self.mask.region_labels.items() if v in keep}
            ),
            mode=self.mode,
        )


@dataclass(frozen=True)
class FmriStats:
    """Define the per-voxel train statistics used for z-scoring."""

    mean: torch.Tensor
    std: torch.Tensor
    voxel_ids: Tuple[int, ...]

    def apply(self, example: PairedExample) -> PairedExample:
        """Return `example` with its response z-scored."""
        values = (example.response.values - self.mean) / self.std
        return replace(example, response=FmriVector(values, example.response.voxel_ids))


def _project(example, mode: ChannelMode):
    return replace(example, stimulus=example.stimulus.as_mode(mode))


async def gather_files(paths: Sequence[Path], reader: Callable[[Path], T]) -> List[T]:
    """Run `reader` over `paths` on worker threads, keeping input order."""
    semaphore = asyncio.Semaphore(MAX_CONCURRENT_READS)

    async def run_one(path: Path) -> T:
        async with semaphore:
            return await asyncio.to_thread(reader, path)

    return list(await asyncio.gather(*(run_one(path) for path in paths)))


def _stimulus_files(directory: Path) -> Dict[str, Path]:
    files = {}  # type: Dict[str, Path]
    if not directory.is_dir():
        return files
    for path in sorted(directory.iterdir()):
        if path.suffix not in (PNG_SUFFIX, RASTER_SUFFIX):
            continue
        if path.stem in files:
            raise DatasetFormatError(path, f"item {path.stem} is stored twice")
        files[path.stem] = path
    return files


def _read_stimulus(path: Path, mode: ChannelMode) -> RgbdSample:
    if path.suffix == PNG_SUFFIX:
        raster, source = read_png(path), ChannelMode.RGB
    else:
        raster = read_raster(path)
        try:
            source = ChannelMode.for_channels(raster.shape[0])
        except ChannelModeError as err:
            raise DatasetFormatError(path, str(err)) from err
    try:
        return RgbdSample(select_channels(raster, source, mode), mode)
    except (ChannelModeError, ConsistencyError) as err:
        raise DatasetFormatError(path, str(err)) from err


async def async_load_dataset(root_path: PathLike, mode: ChannelMode) -> DatasetSplits:
    """Load and validate `root/{paired_train,paired_test,unpaired}`."""
    root = Path(root_path)
    mode = ChannelMode(mode)
    if not root.is_dir():
        raise DatasetFormatError(root, "dataset root is not a directory")

    files = {split: _stimulus_files(root / split) for split in (
        SPLIT_PAIRED_TRAIN, SPLIT_PAIRED_TEST, SPLIT_UNPAIRED
    )}
    _check_disjoint(files)

    paired_ids = sorted(files[SPLIT_PAIRED_TRAIN]) + sorted(files[SPLIT_PAIRED_TEST])
    fmri_paths = [root / FMRI_DIR / f"{item_id}{FMRI_SUFFIX}" for item_id in paired_ids]
    missing = [p.stem for p in fmri_paths if not p.is_file()]
    if missing:
        raise ConsistencyError("Paired items without an fMRI file", missing)

    table_path = root / FMRI_DIR / VOXEL_TABLE
    table = read_voxel_table(table_path) if table_path.is_file() else None

    stimuli = {}
    for split, split_files in files.items():
        _LOGGER.debug("Reading %s stimuli from %s", len(split_files), root / split)
        rasters = await gather_files(
            list(split_files.values()), lambda path: _read_stimulus(path, mode)
        )
        stimuli[split] = dict(zip(split_files, rasters))
    responses = dict(zip(paired_ids, await gather_files(fmri_paths, read_fmri)))

    _check_resolution(stimuli)
    voxel_ids, regions = _resolve_voxels(responses, table)

    def paired(split: str) -> Tuple[PairedExample, ...]:
        return tuple(
            PairedExample(
                stimulus=stimuli[split][item_id],
                response=FmriVector(responses[item_id], voxel_ids),
                item_id=item_id,
            )
            for item_id in sorted(stimuli[split])
        )

    splits = DatasetSplits(
        paired_train=paired(SPLIT_PAIRED_TRAIN),
        paired_test=paired(SPLIT_PAIRED_TEST),
        unpaired=tuple(
            UnpairedExample(stimulus=stimuli[SPLIT_UNPAIRED][item_id], item_id=item_id)
            for item_id in sorted(stimuli[SPLIT_UNPAIRED])
        ),
        mask=VoxelMask(regions),
        mode=mode,
    )
    _LOGGER.info(
        "Loaded %s (paired-train, paired-test, unpaired) items in mode %s from %s",
        splits.sizes,
        mode.value,
        root,
    )
    return splits


def load_dataset(root_path: PathLike, mode: ChannelMode) -> DatasetSplits:
    """Load a dataset root; see `async_load_dataset`."""
    return asyncio.run(async_load_dataset(root_path, mode))


def _check_disjoint(files: Dict[str, Dict[str, Path]]) -> None:
    train = set(files[SPLIT_PAIRED_TRAIN])
    test = set(files[SPLIT_PAIRED_TEST])
    unpaired = set(files[SPLIT_UNPAIRED])
    if train & test:
        raise ConsistencyError("Items in both paired_train and paired_test", train & test)
    if unpaired & (train | test):
        raise ConsistencyError(
            "Unpaired items that are also paired", unpaired & (train | test)
        )


def _check_resolution(stimuli: Dict[str, Dict[str, RgbdSample]]) -> None:
    resolutions = {
        item_id: sample.resolution
        for split in stimuli.values()
        for item_id, sample in split.items()
    }
    if not resolutions:
        return
    common, _ = Counter(resolutions.values()).most_common(1)[0]
    offending = [item_id for item_id, res in resolutions.items() if res != common]
    if offending:
        raise ConsistencyError(
            f"Rasters whose resolution differs from {common[0]}x{common[1]}", offending
        )


def _resolve_voxels(
    responses: Dict[str, torch.Tensor], table
) -> Tuple[Tuple[int, ...], Dict[int, str]]:
    if table is not None:
        voxel_ids, regions = table
        expected = len(voxel_ids)
    elif responses:
        expected = Counter(len(v) for v in responses.values()).most_common(1)[0][0]
        voxel_ids = tuple(range(expected))
        regions = {voxel: REGION_OTHER for voxel in voxel_ids}
    else:
        return (), {}
    offending = [item_id for item_id, values in responses.items() if len(values) != expected]
    if offending:
        raise ConsistencyError(f"fMRI vectors whose length differs from {expected}", offending)
    return voxel_ids, regions


async def async_save_dataset(root_path: PathLike, splits: DatasetSplits) -> None:
    """Write `splits` in the dataset layout, one raster/fMRI file per item."""
    root = Path(root_path)
    for split in (SPLIT_PAIRED_TRAIN, SPLIT_PAIRED_TEST, SPLIT_UNPAIRED, FMRI_DIR):
        (root / split).mkdir(parents=True, exist_ok=True)

    jobs = []  # type: List[Tuple[Path, Callable[[], None]]]

    def stimulus_job(split, example):
        path = root / split / f"{example.item_id}{RASTER_SUFFIX}"
        return path, lambda: write_raster(path, example.stimulus.raster)

    def fmri_job(example):
        path = root / FMRI_DIR / f"{example.item_id}{FMRI_SUFFIX}"
        return path, lambda: write_fmri(path, example.response.values)

    for example in splits.paired_train:
        jobs += [stimulus_job(SPLIT_PAIRED_TRAIN, example), fmri_job(example)]
    for example in splits.paired_test:
        jobs += [stimulus_job(SPLIT_PAIRED_TEST, example), fmri_job(example)]
    for example in splits.unpaired:
        jobs.append(stimulus_job(SPLIT_UNPAIRED, example))

    writers = dict(jobs)
    await gather_files([path for path, _ in jobs], lambda path: writers[path]())
    voxel_ids = splits.voxel_ids
    if voxel_ids:
        write_voxel_table(
            root / FMRI_DIR / VOXEL_TABLE,
            voxel_ids,
            {v: splits.mask.region_labels.get(v, REGION_OTHER) for v in voxel_ids},
        )
    _LOGGER.info("Wrote %s items to %s", len(jobs), root)


def save_dataset(root_path: PathLike, splits: DatasetSplits) -> None:
    """Write a dataset root; see `async_save_dataset`."""
    asyncio.run(async_save_dataset(root_path, splits))


def normalize_fmri(
    train: Sequence[PairedExample], *others: Sequence[PairedExample]
) -> Tuple[Tuple[PairedExample, ...], List[Tuple[PairedExample, ...]], FmriStats]:
    """Z-score every voxel with statistics of `train` only.

    Args:
        train: Paired items defining the per-voxel mean and std.
        others: Further collections transformed with the train statistics.

    Returns:
        The normalized train collection, the normalized other collections
        and the statistics used.
    """
    if not train:
        raise ConsistencyError("Cannot normalize fMRI without training items")
    voxel_ids = train[0].response.voxel_ids
    values = np.stack([e.response.values.numpy().astype(np.float64) for e in train])
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    constant = std == 0.0
    if constant.any():
        _LOGGER.warning(
            "Zero-variance voxels, std replaced by 1: %s",
            [voxel_ids[i] for i in np.flatnonzero(constant)],
        )
        std[constant] = 1.0

    stats = FmriStats(
        mean=torch.from_numpy(mean.astype(np.float32)),
        std=torch.from_numpy(std.astype(np.float32)),
        voxel_ids=voxel_ids,
    )
    normalized_train = tuple(
        replace(
            example,
            response=FmriVector(
                torch.from_numpy(((row - mean) / std).astype(np.float32)), voxel_ids
            ),
        )
        for example, row in zip(train, values)
    )
    normalized_others = [tuple(stats.apply(e) for e in other) for other in others]
    return normalized_train, normalized_others, stats


def normalize_splits(splits: DatasetSplits) -> Tuple[DatasetSplits, FmriStats]:
    """Return `splits` with responses z-scored by paired-train statistics."""
    train, (test,), stats = normalize_fmri(splits.paired_train, splits.paired_test)
    return replace(splits, paired_train=train, paired_test=test), stats


def split_validation(
    items: Sequence[T], fraction: float, seed: int
) -> Tuple[Tuple[T, ...], Tuple[T, ...]]:
    """Split off a seeded validation subset.

    Collections too small to split validate on the training items.
    """
    count = int(round(len(items) * fraction))
    if count < 1 or count >= len(items):
        return tuple(items), tuple(items)
    order = np.random.default_rng(seed).permutation(len(items))
    held_out = set(order[:count].tolist())
    train = tuple(item for idx, item in enumerate(items) if idx not in held_out)
    validation = tuple(item for idx, item in enumerate(items) if idx in held_out)
    return train, validation


def iterate_batches(
    items: Sequence[T],
    batch_size: int,
    seed: int,
    epoch: int = 0,
    shuffle: bool = True,
) -> Iterator[List[T]]:
    """Yield seeded batches; the same (seed, epoch) gives the same sequence."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(len(items))
    else:
        order = np.arange(len(items))
    for start in range(0, len(items), batch_size):
        yield [items[idx] for idx in order[start : start + batch_size]]


def cycle_batches(
    items: Sequence[T], batch_size: int, seed: int
) -> Iterator[List[T]]:
    """Yield seeded batches forever, reshuffling at every pass."""
    epoch = 0
    while items:
        yield from iterate_batches(items, batch_size, seed, epoch)
        epoch += 1


def unpaired_from(examples: Sequence, mode: Optional[ChannelMode] = None) -> Tuple[UnpairedExample, ...]:
    """Return stimulus-only views of `examples`."""
    result = []
    for example in examples:
        stimulus = example.stimulus if mode is None else example.stimulus.as_mode(mode)
        result.append(UnpairedExample(stimulus=stimulus, item_id=example.item_id))
    return tuple(result)
