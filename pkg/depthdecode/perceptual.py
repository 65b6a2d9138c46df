"""Depth-based recognition networks and block-wise perceptual similarity."""
from dataclasses import dataclass
import logging
from typing import Dict, List, Optional, Sequence, Tuple, Union

import torch
from torch import nn
import torch.nn.functional as F

from .const import COSINE_EPS, EXTRACTOR_WIDTHS, NORM_EPS
from .errors import ChannelModeError, ConsistencyError
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
from .dataset import split_validation
from .sample import ChannelMode, RgbdSample, select_channels
from .scene import labelled_scene, render_rgbd

_LOGGER = logging.getLogger(__name__)

NUM_SHAPE_CLASSES = 4


def _activation(name: str) -> nn.Module:
    return {"relu": nn.ReLU, "elu": nn.ELU}[name]()


def _pool(name: str) -> nn.Module:
    return {"max": nn.MaxPool2d, "avg": nn.AvgPool2d}[name](kernel_size=2)


class FeatureExtractor(nn.Module):
    """Define a VGG-style recognition network exposing one tap per block.

    Each block is conv -> act -> pool(2) -> conv -> act, so block b emits
    features at input size / 2^b (floor), taken after its last nonlinearity.
    """

    def __init__(
        self,
        input_channels: int,
        widths: Sequence[int] = EXTRACTOR_WIDTHS,
        num_classes: int = NUM_SHAPE_CLASSES,
        activation: str = "relu",
        pooling: str = "max",
        bias: bool = True,
    ) -> None:
        super().__init__()
        self._config = {
            "input_channels": int(input_channels),
            "widths": [int(w) for w in widths],
            "num_classes": int(num_classes),
            "activation": activation,
            "pooling": pooling,
            "bias": bool(bias),
        }
        blocks = []
        in_channels = input_channels
        for width in widths:
            blocks.append(
                nn.Sequential(
                    nn.Conv2d(in_channels, width, 3, padding=1, bias=bias),
                    _activation(activation),
                    _pool(pooling),
                    nn.Conv2d(width, width, 3, padding=1, bias=bias),
                    _activation(activation),
                )
            )
            in_channels = width
        self.blocks = nn.ModuleList(blocks)
        self.classifier = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
            nn.Linear(in_channels, num_classes, bias=bias),
        )

    @classmethod
    def from_config(cls, **config) -> "FeatureExtractor":
        """Build an untrained extractor from its constructor arguments."""
        return cls(**config)

    def config(self) -> Dict:
        """Return the constructor arguments."""
        return dict(self._config)

    @property
    def input_channels(self) -> int:
        """Return the expected input channel count."""
        return self._config["input_channels"]

    @property
    def mode(self) -> ChannelMode:
        """Return the channel mode this extractor reads."""
        return ChannelMode.for_channels(self.input_channels)

    @property
    def widths(self) -> List[int]:
        """Return the per-block channel counts."""
        return list(self._config["widths"])

    def features(self, x: torch.Tensor, blocks: Optional[int] = None) -> List[torch.Tensor]:
        """Return the outputs of the first `blocks` blocks (all by default)."""
        if x.shape[1] != self.input_channels:
            raise ChannelModeError(
                f"Extractor reads {self.input_channels} channels, input has {x.shape[1]}"
            )
        taps = []
        for block in self.blocks[: blocks or len(self.blocks)]:
            x = block(x)
            taps.append(x)
        return taps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Return class logits."""
        return self.classifier(self.features(x)[-1])


@dataclass(frozen=True)
class FeaturePyramid:
    """Define per-block feature maps f_1..f_B of a batch."""

    levels: Tuple[torch.Tensor, ...]

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, block: int) -> torch.Tensor:
        return self.levels[block]


def _as_batch(x: Union[RgbdSample, torch.Tensor]) -> torch.Tensor:
    if isinstance(x, RgbdSample):
        return x.raster.unsqueeze(0)
    return x if x.dim() == 4 else x.unsqueeze(0)


def extract_features(
    x: Union[RgbdSample, torch.Tensor], extractor: FeatureExtractor
) -> FeaturePyramid:
    """Return the feature pyramid of `x` (a sample or a batch)."""
    batch = _as_batch(x)
    return FeaturePyramid(tuple(extractor.features(batch)))


def channel_normalize(features: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """Scale each spatial position's channel vector to unit norm."""
    return features / torch.sqrt(torch.sum(features**2, dim=1, keepdim=True) + eps)


def cosine_similarity(
    a: torch.Tensor, b: torch.Tensor, dim: int = -1, eps: float = COSINE_EPS
) -> torch.Tensor:
    """Return the epsilon-stabilized cosine along `dim`.

    Two all-zero vectors are identical and score 1; one zero vector scores 0.
    """
    square_a = torch.sum(a * a, dim=dim)
    square_b = torch.sum(b * b, dim=dim)
    cosine = torch.sum(a * b, dim=dim) / (
        torch.sqrt(square_a + eps) * torch.sqrt(square_b + eps)
    )
    both_zero = (square_a == 0) & (square_b == 0)
    return torch.where(both_zero, torch.ones_like(cosine), cosine)


def block_cosines(
    pyramid_a: FeaturePyramid, pyramid_b: FeaturePyramid, cosine: str = "flattened"
) -> torch.Tensor:
    """Return the (batch, blocks) cosines c_b of two pyramids.

    "flattened" takes one cosine per block over all channel-normalized
    elements; "per_position" averages the cosine of every spatial position.
    """
    if len(pyramid_a) != len(pyramid_b):
        raise ConsistencyError("Pyramids differ in block count")
    values = []
    for fa, fb in zip(pyramid_a.levels, pyramid_b.levels):
        if fa.shape != fb.shape:
            raise ConsistencyError(f"Block shapes differ: {tuple(fa.shape)} vs {tuple(fb.shape)}")
        na, nb = channel_normalize(fa), channel_normalize(fb)
        if cosine == "per_position":
            values.append(cosine_similarity(na, nb, dim=1).flatten(1).mean(dim=1))
        else:
            values.append(cosine_similarity(na.flatten(1), nb.flatten(1), dim=1))
    return torch.stack(values, dim=1)


def pyramid_loss(
    pyramid_hat: FeaturePyramid,
    pyramid: FeaturePyramid,
    cosine: str = "flattened",
    reduction: str = "mean",
) -> torch.Tensor:
    """Return (1 - mean_b c_b) / 2 from precomputed pyramids."""
    per_sample = (1.0 - block_cosines(pyramid_hat, pyramid, cosine).mean(dim=1)) / 2.0
    return per_sample.mean() if reduction == "mean" else per_sample


def perceptual_loss(
    s_hat: Union[RgbdSample, torch.Tensor],
    s: Union[RgbdSample, torch.Tensor],
    extractor: FeatureExtractor,
    cosine: str = "flattened",
    reduction: str = "mean",
) -> torch.Tensor:
    """Return the block-wise perceptual dissimilarity in [0, 1].

    Args:
        s_hat: Reconstruction, a sample or an N x C x H x W batch.
        s: Target with the same shape.
        extractor: Recognition network matching the channel mode.
        cosine: "flattened" or "per_position" block cosine.
        reduction: "mean" over the batch, or "none" for per-sample values.
    """
    batch_hat, batch = _as_batch(s_hat), _as_batch(s)
    if batch_hat.shape != batch.shape:
        raise ChannelModeError(
            f"Shapes differ: {tuple(batch_hat.shape)} vs {tuple(batch.shape)}"
        )
    return pyramid_loss(
        extract_features(batch_hat, extractor),
        extract_features(batch, extractor),
        cosine,
        reduction,
    )


def make_shape_dataset(
    count: int,
    seed: int,
    resolution: Tuple[int, int],
    mode: ChannelMode = ChannelMode.RGBD,
    classes: int = NUM_SHAPE_CLASSES,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Return a balanced labelled scene set (class = shape x depth band)."""
    labels = torch.arange(count) % classes
    rasters = torch.stack(
        [
            select_channels(
                render_rgbd(labelled_scene(seed * 1_000_003 + idx, int(label), resolution)),
                ChannelMode.RGBD,
                mode,
            )
            for idx, label in enumerate(labels)
        ]
    )
    return rasters, labels


@torch.no_grad()
def classification_accuracy(
    extractor: FeatureExtractor, samples: torch.Tensor, labels: torch.Tensor, batch_size: int = 128
) -> float:
    """Return the top-1 accuracy of `extractor` on `samples`."""
    extractor.eval()
    device = next(extractor.parameters()).device
    correct = 0
    for start in range(0, len(samples), batch_size):
        logits = extractor(samples[start : start + batch_size].to(device))
        correct += int((logits.argmax(dim=1).cpu() == labels[start : start + batch_size]).sum())
    return correct / max(1, len(samples))


def pretrain_classifier(
    samples: torch.Tensor,
    labels: torch.Tensor,
    config,
    device: str = "cpu",
    progress: Optional[ProgressLog] = None,
) -> FitResult:
    """Train a FeatureExtractor for recognition from scratch.

    Args:
        samples: N x C x H x W rasters; C selects the D/RGB/RGBD variant.
        labels: N integer class labels aligned with `samples`.
        config: FeatureConfig with architecture and schedule.
        device: Torch device name.
        progress: Optional per-step record sink.

    Returns:
        FitResult whose metrics hold the validation accuracy.
    """
    if len(samples) != len(labels):
        raise ConsistencyError(f"{len(samples)} samples but {len(labels)} labels")
    classes = sorted(set(int(label) for label in labels))
    if len(classes) < 2:
        raise ConsistencyError("Classification pretraining needs at least 2 classes")

    generator = seed_everything(config.seed)
    target = resolve_device(device)
    progress = progress or ProgressLog()
    train_idx, val_idx = split_validation(
        list(range(len(samples))), config.validation_fraction, config.seed
    )
    train_idx, val_idx = torch.tensor(train_idx), torch.tensor(val_idx)

    extractor = FeatureExtractor(
        input_channels=samples.shape[1],
        widths=config.widths,
        num_classes=max(classes) + 1,
        activation=config.activation,
        pooling=config.pooling,
    ).to(target)
    steps_per_epoch = -(-len(train_idx) // config.batch_size)
    optimizer, scheduler = make_optimizer(
        extractor.parameters(),
        config.learning_rate,
        0.0,
        steps_per_epoch * config.epochs,
    )
    stopper = EarlyStopping(patience=max(3, config.epochs))
    step = 0
    last_good = None
    for epoch in range(config.epochs):
        extractor.train()
        order = train_idx[torch.randperm(len(train_idx), generator=generator)]
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            logits = extractor(samples[batch].to(target))
            loss = F.cross_entropy(logits, labels[batch].to(target))
            terms = as_floats({"cross_entropy": loss})
            ensure_finite(terms, step, last_good)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            if scheduler is not None:
                scheduler.step()
            progress.record("pretrain", epoch, step, **terms)
            last_good = terms
            step += 1
        accuracy = classification_accuracy(extractor, samples[val_idx], labels[val_idx])
        _LOGGER.info("Pretrain epoch %s: validation accuracy %.3f", epoch, accuracy)
        stopper.update(-accuracy, epoch, extractor)
    stopper.restore(extractor)
    extractor.eval()
    accuracy = -stopper.best
    return FitResult(
        model=extractor,
        history=progress.records,
        metrics={"validation_accuracy": accuracy, "epoch": stopper.best_epoch},
    )
