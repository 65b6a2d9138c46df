"""Provide ground-truth depth: precomputed-map ingestion and a trainable estimator."""
import asyncio
import copy
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .const import DEFAULT_RESOLUTION, ESTIMATOR_WIDTH, PNG_SUFFIX, RASTER_SUFFIX
from .dataset import gather_files, iterate_batches, split_validation
from .errors import ConsistencyError, DatasetFormatError, MissingDepthError
from .fileio import PathLike, read_png, read_raster
from .fitting import (
    EarlyStopping,
    FitResult,
    ProgressLog,
    as_floats,
    ensure_finite,
    make_optimizer,
    resolve_device,
    seed_everything,
)
from .sample import ChannelMode, RgbdSample, UnpairedExample, select_channels
from .scene import random_scene, render_rgbd

_LOGGER = logging.getLogger(__name__)

ESTIMATOR_STAGES = 4
ASPECT_TOLERANCE = 0.02


class DepthEstimator(nn.Module):
    """Define M: a small RGB -> depth encoder-decoder with skip connections."""

    def __init__(self, width: int = ESTIMATOR_WIDTH, stages: int = ESTIMATOR_STAGES) -> None:
        super().__init__()
        self._config = {"width": int(width), "stages": int(stages)}
        widths = [width * 2**stage for stage in range(stages)]
        self.down = nn.ModuleList()
        in_channels = 3
        for out_channels in widths:
            self.down.append(
                nn.Sequential(
                    nn.Conv2d(in_channels, out_channels, 3, padding=1),
                    nn.ReLU(),
                    nn.Conv2d(out_channels, out_channels, 3, padding=1),
                    nn.ReLU(),
                )
            )
            in_channels = out_channels
        self.bottleneck = nn.Sequential(
            nn.Conv2d(in_channels, in_channels, 3, padding=1), nn.ReLU()
        )
        self.up = nn.ModuleList()
        for skip_channels in reversed(widths):
            self.up.append(
                nn.Sequential(
                    nn.Conv2d(in_channels + skip_channels, skip_channels, 3, padding=1),
                    nn.ReLU(),
                )
            )
            in_channels = skip_channels
        self.output = nn.Conv2d(in_channels, 1, 1)

    @classmethod
    def from_config(cls, **config) -> "DepthEstimator":
        """Build an untrained estimator from its constructor arguments."""
        return cls(**config)

    def config(self) -> Dict:
        """Return the constructor arguments."""
        return dict(self._config)

    def forward(self, rgb: torch.Tensor) -> torch.Tensor:
        """Return N x 1 x H x W depth in [0, 1] for N x 3 x H x W color."""
        skips = []
        x = rgb
        for block in self.down:
            x = block(x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        x = self.bottleneck(x)
        for block, skip in zip(self.up, reversed(skips)):
            x = F.interpolate(x, size=skip.shape[-2:], mode="nearest")
            x = block(torch.cat([x, skip], dim=1))
        return torch.sigmoid(self.output(x))


def minmax_normalize(depth: torch.Tensor, stem: str = "") -> torch.Tensor:
    """Scale a depth raster to [0, 1]; a constant raster becomes all zeros."""
    low, high = float(depth.min()), float(depth.max())
    if high - low <= 0.0:
        _LOGGER.warning("Constant depth raster %s normalized to zeros", stem)
        return torch.zeros_like(depth)
    return (depth - low) / (high - low)


def _resize(raster: torch.Tensor, resolution: Tuple[int, int]) -> torch.Tensor:
    if tuple(raster.shape[-2:]) == tuple(resolution):
        return raster
    return F.interpolate(
        raster.unsqueeze(0), size=tuple(resolution), mode="bilinear", align_corners=False
    )[0]


def _read_image(path: Path) -> torch.Tensor:
    if path.suffix == PNG_SUFFIX:
        return read_png(path)
    raster = read_raster(path)
    if raster.shape[0] != 3:
        raise DatasetFormatError(path, f"expected 3 color channels, got {raster.shape[0]}")
    return raster


def _read_depth(path: Path) -> torch.Tensor:
    raster = read_raster(path)
    if raster.shape[0] != 1:
        raise DatasetFormatError(path, f"expected 1 depth channel, got {raster.shape[0]}")
    return raster


def _files(directory: Path, suffixes: Sequence[str]) -> Dict[str, Path]:
    if not directory.is_dir():
        raise DatasetFormatError(directory, "not a directory")
    return {
        path.stem: path
        for path in sorted(directory.iterdir())
        if path.suffix in suffixes
    }


async def async_ingest_precomputed_depth(
    image_dir: PathLike,
    depth_dir: PathLike,
    resolution: Tuple[int, int] = DEFAULT_RESOLUTION,
) -> Tuple[UnpairedExample, ...]:
    """Pair every image with its same-stem depth raster into RGBD samples.

    Both rasters are resized bilinearly to `resolution` and the depth is
    min-max normalized per image afterwards.

    Raises:
        MissingDepthError: images without a depth raster.
        ConsistencyError: image and depth aspect ratios disagree.
    """
    images = _files(Path(image_dir), (PNG_SUFFIX, RASTER_SUFFIX))
    depths = _files(Path(depth_dir), (RASTER_SUFFIX,))
    missing = sorted(set(images) - set(depths))
    if missing:
        raise MissingDepthError(missing)
    stems = sorted(images)
    rgbs = await gather_files([images[stem] for stem in stems], _read_image)
    maps = await gather_files([depths[stem] for stem in stems], _read_depth)

    mismatched = []
    examples = []
    for stem, rgb, depth in zip(stems, rgbs, maps):
        ratio_rgb = rgb.shape[-1] / rgb.shape[-2]
        ratio_depth = depth.shape[-1] / depth.shape[-2]
        if abs(ratio_rgb - ratio_depth) > ASPECT_TOLERANCE * ratio_rgb:
            mismatched.append(stem)
            continue
        rgb = _resize(rgb, resolution).clamp(0.0, 1.0)
        depth = minmax_normalize(_resize(depth, resolution), stem)
        examples.append(
            UnpairedExample(
                stimulus=RgbdSample(torch.cat([rgb, depth]), ChannelMode.RGBD),
                item_id=stem,
            )
        )
    if mismatched:
        raise ConsistencyError("Image and depth aspect ratios differ", mismatched)
    _LOGGER.info("Ingested %s RGBD samples from %s", len(examples), image_dir)
    return tuple(examples)


def ingest_precomputed_depth(
    image_dir: PathLike,
    depth_dir: PathLike,
    resolution: Tuple[int, int] = DEFAULT_RESOLUTION,
) -> Tuple[UnpairedExample, ...]:
    """Ingest precomputed depth; see `async_ingest_precomputed_depth`."""
    return asyncio.run(async_ingest_precomputed_depth(image_dir, depth_dir, resolution))


def scene_seeds(seed: int, count: int) -> List[int]:
    """Return `count` independent scene seeds derived from `seed`."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]


def synthetic_rgbd(
    count: int,
    seed: int,
    resolution: Tuple[int, int] = DEFAULT_RESOLUTION,
    max_objects: int = 4,
) -> torch.Tensor:
    """Render `count` seeded random scenes as an N x 4 x H x W tensor."""
    if count == 0:
        return torch.zeros((0, 4, *resolution))
    return torch.stack(
        [
            render_rgbd(random_scene(scene_seed, resolution, max_objects))
            for scene_seed in scene_seeds(seed, count)
        ]
    )


def _as_rgbd(samples) -> torch.Tensor:
    if isinstance(samples, torch.Tensor):
        return samples
    return torch.stack(
        [
            select_channels(s.stimulus.raster, s.stimulus.mode, ChannelMode.RGBD)
            for s in samples
        ]
    )


@torch.no_grad()
def estimator_error(
    estimator: DepthEstimator, samples: torch.Tensor, batch_size: int = 64
) -> float:
    """Return the mean absolute depth error of `estimator` on RGBD `samples`."""
    estimator.eval()
    device = next(estimator.parameters()).device
    total = 0.0
    for start in range(0, len(samples), batch_size):
        batch = samples[start : start + batch_size].to(device)
        total += float(torch.abs(estimator(batch[:, :3]) - batch[:, 3:]).sum())
    return total / max(1, samples[:, 3:].numel())


def mean_depth_baseline(train: torch.Tensor, validation: torch.Tensor) -> float:
    """Return the error of predicting the train-set mean depth everywhere."""
    mean = float(train[:, 3:].mean())
    return float(torch.abs(validation[:, 3:] - mean).mean())


def estimate_depth(estimator: DepthEstimator, rgb: torch.Tensor, batch_size: int = 64) -> torch.Tensor:
    """Return the N x 1 x H x W depth estimated from N x 3 x H x W color."""
    if len(rgb) == 0:
        return rgb.new_zeros((0, 1, *rgb.shape[-2:]))
    estimator.eval()
    device = next(estimator.parameters()).device
    with torch.no_grad():
        chunks = [
            estimator(rgb[start : start + batch_size].to(device)).cpu()
            for start in range(0, len(rgb), batch_size)
        ]
    return torch.cat(chunks)


def freeze(model: nn.Module) -> nn.Module:
    """Put `model` in inference mode with gradients disabled for its parameters."""
    model.eval()
    model.requires_grad_(False)
    return model


def train_depth_estimator(
    train,
    config,
    validation=None,
    device: str = "cpu",
    progress: Optional[ProgressLog] = None,
) -> FitResult:
    """Train a DepthEstimator on RGBD samples with a mean l1 depth loss.

    Args:
        train: RGBD examples or an N x 4 x H x W tensor.
        config: DepthEstimatorConfig.
        validation: Held-out RGBD samples; a 10% split of `train` when None.
        device: Torch device name.
        progress: Optional per-step record sink.

    Returns:
        FitResult with the validation mean absolute error and the
        mean-depth baseline error.
    """
    samples = _as_rgbd(train)
    if len(samples) == 0:
        raise ConsistencyError("Depth estimator training needs at least one sample")
    if validation is None:
        indices = list(range(len(samples)))
        train_idx, val_idx = split_validation(indices, 0.1, config.seed)
        held_out = samples[list(val_idx)]
        samples = samples[list(train_idx)]
    else:
        held_out = _as_rgbd(validation)

    seed_everything(config.seed)
    target = resolve_device(device)
    progress = progress or ProgressLog()
    estimator = DepthEstimator(width=config.width).to(target)
    steps_per_epoch = -(-len(samples) // config.batch_size)
    optimizer, scheduler = make_optimizer(
        estimator.parameters(), config.learning_rate, 0.0, steps_per_epoch * config.epochs
    )
    stopper = EarlyStopping(patience=config.epochs)
    baseline = mean_depth_baseline(samples, held_out)
    step = 0
    last_good = None
    indices = list(range(len(samples)))
    for epoch in range(config.epochs):
        estimator.train()
        for batch_idx in iterate_batches(indices, config.batch_size, config.seed, epoch):
            batch = samples[batch_idx].to(target)
            loss = torch.mean(torch.abs(estimator(batch[:, :3]) - batch[:, 3:]))
            terms = as_floats({"l1": loss})
            ensure_finite(terms, step, last_good)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            if scheduler is not None:
                scheduler.step()
            progress.record("depth_estimator", epoch, step, **terms)
            last_good = terms
            step += 1
        error = estimator_error(estimator, held_out)
        _LOGGER.info(
            "Depth estimator epoch %s: validation error %.4f (mean-depth baseline %.4f)",
            epoch,
            error,
            baseline,
        )
        stopper.update(error, epoch, estimator)
    stopper.restore(estimator)
    estimator.eval()
    return FitResult(
        model=estimator,
        history=copy.copy(progress.records),
        metrics={
            "validation_error": stopper.best,
            "baseline_error": baseline,
            "epoch": stopper.best_epoch,
        },
    )
