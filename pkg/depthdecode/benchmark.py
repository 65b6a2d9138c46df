"""Generate the synthetic scene + simulated-brain benchmark."""
from dataclasses import dataclass, replace
import hashlib
import json
import logging
from pathlib import Path
import shutil
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from .__version__ import __version__
from .const import (
    BENCHMARK_MANIFEST,
    HVC_REGIONS,
    LVC_REGIONS,
    REGION_FFA,
    REGION_LOC,
    REGION_PPA,
    REGION_V1,
    REGION_V2,
    REGION_V3,
)
from .dataset import DatasetSplits, save_dataset
from .depth import synthetic_rgbd
from .errors import ChannelModeError, ConfigError, OutputExistsError
from .fileio import PathLike
from .sample import ChannelMode, FmriVector, PairedExample, RgbdSample, UnpairedExample, VoxelMask

_LOGGER = logging.getLogger(__name__)

LVC_CYCLE = (REGION_V1, REGION_V2, REGION_V3)
HVC_CYCLE = (REGION_LOC, REGION_FFA, REGION_PPA)
DEPTH_ONLY = np.array([0.0, 0.0, 0.0, 1.0])

Seed = Union[int, Sequence[int]]


@dataclass(frozen=True)
class SimulatedBrain:
    """Define a linear voxel model over 4 x G x G average-pooled RGBD stimuli.

    Voxel v responds sum_k channel[v, k] * sum_p spatial[v, p] * x[k, p],
    scaled so its signal has unit standard deviation on the calibration
    stimuli, plus Gaussian noise of standard deviation sigma.
    """

    voxel_ids: Tuple[int, ...]
    regions: Dict[int, str]
    spatial: np.ndarray
    channel: np.ndarray
    scale: np.ndarray
    sigma: float
    grid: int
    planted_depth: Tuple[int, ...]
    planted_color: Tuple[int, ...]

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ConfigError(f"Noise sigma must be >= 0, got {self.sigma}")

    @property
    def weights(self) -> np.ndarray:
        """Return the V x 4 x G x G projection."""
        return (
            self.scale[:, None, None, None]
            * self.channel[:, :, None, None]
            * self.spatial[:, None, :, :]
        )

    @property
    def projection_sha256(self) -> str:
        """Return a sha256 over the float64 little-endian projection."""
        return hashlib.sha256(
            np.ascontiguousarray(self.weights, dtype="<f8").tobytes()
        ).hexdigest()

    @property
    def noise_ceiling(self) -> np.ndarray:
        """Return signal variance over total variance per voxel."""
        signal = (self.scale > 0).astype(np.float64)
        total = signal + self.sigma**2
        return np.divide(signal, total, out=np.zeros_like(signal), where=total > 0)

    @property
    def mixed(self) -> Tuple[int, ...]:
        """Return only those voxels with no planted channel tuning."""
        planted = set(self.planted_depth) | set(self.planted_color)
        return tuple(v for v in self.voxel_ids if v not in planted)

    def signal(self, stimuli: torch.Tensor) -> np.ndarray:
        """Return the noise-free N x V responses of N x 4 x H x W stimuli."""
        pooled = downsample(stimuli, self.grid)
        return pooled.reshape(len(pooled), -1) @ self.weights.reshape(len(self.voxel_ids), -1).T


def downsample(stimuli: torch.Tensor, grid: int) -> np.ndarray:
    """Return N x 4 x G x G float64 average-pooled stimuli."""
    if stimuli.dim() == 3:
        stimuli = stimuli.unsqueeze(0)
    if stimuli.shape[1] != 4:
        raise ChannelModeError(
            f"The simulated brain reads RGBD stimuli, got {stimuli.shape[1]} channels"
        )
    return F.adaptive_avg_pool2d(stimuli.double(), grid).numpy()


def _receptive_field(rng: np.random.Generator, grid: int, width: float) -> np.ndarray:
    center = rng.uniform(0.0, grid, size=2)
    coords = np.arange(grid) + 0.5
    rows = np.exp(-((coords - center[0]) ** 2) / (2.0 * width**2))
    cols = np.exp(-((coords - center[1]) ** 2) / (2.0 * width**2))
    field = np.outer(rows, cols)
    return field / field.sum()


def make_brain(config, calibration: torch.Tensor) -> SimulatedBrain:
    """Draw a SimulatedBrain from a BenchmarkConfig and calibrate its scale.

    LVC voxels pool a localized Gaussian patch; HVC voxels pool the whole
    field, or nothing when `hvc_informative` is off. Planted depth-only and
    color-only voxels are drawn from LVC.
    """
    if len(calibration) < 2:
        raise ConfigError(
            f"Calibrating voxel scales needs at least 2 stimuli, got {len(calibration)}"
        )
    voxels, grid = config.voxels, config.grid
    lvc_count = int(round(voxels * config.lvc_fraction))
    if config.depth_voxels + config.color_voxels > lvc_count:
        raise ConfigError(
            f"{config.depth_voxels + config.color_voxels} planted voxels need as many "
            f"LVC voxels, only {lvc_count} exist"
        )
    rng = np.random.default_rng(config.brain_seed)
    voxel_ids = tuple(range(voxels))
    regions = {
        v: LVC_CYCLE[v % 3] if v < lvc_count else HVC_CYCLE[(v - lvc_count) % 3]
        for v in voxel_ids
    }

    spatial = np.zeros((voxels, grid, grid))
    for v in voxel_ids:
        if v < lvc_count:
            spatial[v] = _receptive_field(rng, grid, config.receptive_field)
        elif config.hvc_informative:
            spatial[v] = 1.0 / (grid * grid)

    channel = rng.normal(size=(voxels, 4))
    planted = rng.permutation(lvc_count)
    planted_depth = tuple(sorted(int(v) for v in planted[: config.depth_voxels]))
    planted_color = tuple(
        sorted(int(v) for v in planted[config.depth_voxels : config.depth_voxels + config.color_voxels])
    )
    channel[list(planted_depth)] = DEPTH_ONLY
    channel[list(planted_color), 3] = 0.0

    brain = SimulatedBrain(
        voxel_ids=voxel_ids,
        regions=regions,
        spatial=spatial,
        channel=channel,
        scale=np.ones(voxels),
        sigma=config.sigma,
        grid=grid,
        planted_depth=planted_depth,
        planted_color=planted_color,
    )
    std = brain.signal(calibration).std(axis=0)
    silent = std <= 1e-12
    wired = np.abs(spatial).sum(axis=(1, 2)) > 0
    if (silent & wired).any():
        _LOGGER.warning(
            "%s voxels carry no signal on the calibration set", int((silent & wired).sum())
        )
    scale = np.divide(1.0, std, out=np.zeros_like(std), where=~silent)
    return replace(brain, scale=scale)


def calibration_stimuli(config, resolution: Tuple[int, int]) -> torch.Tensor:
    """Return the scenes that fix voxel scales, drawn apart from the dataset items."""
    return synthetic_rgbd(
        config.calibration_scenes, config.brain_seed, resolution, config.max_objects
    )


def simulate_response(brain: SimulatedBrain, s: RgbdSample, seed: Seed) -> FmriVector:
    """Return the brain's noisy response to `s`; deterministic given `seed`."""
    raster = s.raster if isinstance(s, RgbdSample) else s
    signal = brain.signal(raster)[0]
    noise = np.random.default_rng(seed).normal(size=signal.shape) * brain.sigma
    return FmriVector(torch.from_numpy((signal + noise).astype(np.float32)), brain.voxel_ids)


def _ensure_empty(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()):
        if not force:
            raise OutputExistsError(f"Output directory {out} is not empty; pass --force")
        _LOGGER.warning("Replacing the contents of %s", out)
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)


def _item_ids(prefix: str, count: int, digits: int) -> List[str]:
    return [f"{prefix}_{idx:0{digits}d}" for idx in range(count)]


def build_benchmark(config, out: PathLike, force: bool = False) -> Path:
    """Write the benchmark dataset tree and its manifest under `out`.

    Returns:
        The manifest path.

    Raises:
        OutputExistsError: `out` is not empty and `force` is off.
    """
    bench = config.benchmark
    resolution = tuple(config.data.resolution)
    out = Path(out)
    _ensure_empty(out, force)

    counts = {
        "paired_train": bench.paired_train,
        "paired_test": bench.paired_test,
        "unpaired": bench.unpaired,
    }
    stimuli = synthetic_rgbd(sum(counts.values()), bench.scene_seed, resolution, bench.max_objects)
    train_x = stimuli[: bench.paired_train]
    test_x = stimuli[bench.paired_train : bench.paired_train + bench.paired_test]
    unpaired_x = stimuli[bench.paired_train + bench.paired_test :]

    brain = make_brain(bench, calibration_stimuli(bench, resolution))

    def paired(prefix: str, rasters: torch.Tensor, offset: int) -> Tuple[PairedExample, ...]:
        return tuple(
            PairedExample(
                stimulus=RgbdSample(raster, ChannelMode.RGBD),
                response=simulate_response(brain, raster, [bench.noise_seed, offset + idx]),
                item_id=item_id,
            )
            for idx, (item_id, raster) in enumerate(
                zip(_item_ids(prefix, len(rasters), 4), rasters)
            )
        )

    splits = DatasetSplits(
        paired_train=paired("train", train_x, 0),
        paired_test=paired("test", test_x, bench.paired_train),
        unpaired=tuple(
            UnpairedExample(stimulus=RgbdSample(raster, ChannelMode.RGBD), item_id=item_id)
            for item_id, raster in zip(_item_ids("unpaired", len(unpaired_x), 5), unpaired_x)
        ),
        mask=VoxelMask(brain.regions),
        mode=ChannelMode.RGBD,
    )
    save_dataset(out, splits)

    lvc = [v for v, region in brain.regions.items() if region in LVC_REGIONS]
    hvc = [v for v, region in brain.regions.items() if region in HVC_REGIONS]
    manifest = {
        "version": __version__,
        "counts": counts,
        "resolution": list(resolution),
        "voxels": bench.voxels,
        "sigma": bench.sigma,
        "grid": bench.grid,
        "receptive_field": bench.receptive_field,
        "calibration_scenes": bench.calibration_scenes,
        "hvc_informative": bench.hvc_informative,
        "seeds": {
            "scene": bench.scene_seed,
            "brain": bench.brain_seed,
            "noise": bench.noise_seed,
        },
        "projection_sha256": brain.projection_sha256,
        "planted": {
            "depth": list(brain.planted_depth),
            "color": list(brain.planted_color),
        },
        "regions": {"LVC": lvc, "HVC": hvc},
        "noise_ceiling": [round(float(c), 10) for c in brain.noise_ceiling],
    }
    path = out / BENCHMARK_MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _LOGGER.info(
        "Built benchmark in %s: %s items, %s voxels, sigma %s",
        out,
        sum(counts.values()),
        bench.voxels,
        bench.sigma,
    )
    return path


def read_benchmark_manifest(root: PathLike) -> Dict:
    """Return the manifest of a benchmark root."""
    return json.loads((Path(root) / BENCHMARK_MANIFEST).read_text(encoding="utf-8"))
