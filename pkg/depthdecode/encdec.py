"""Define the stimulus -> fMRI encoder, the fMRI -> stimulus decoder and their losses."""
import copy
import logging
from typing import Dict, List, Sequence, Tuple, Union

import torch
from torch import nn
import torch.nn.functional as F

from .const import (
    ALPHA,
    DECODER_UPSAMPLE_STAGES,
    DECODER_WIDTH,
    ENCODER_BACKBONE_BLOCKS,
    ENCODER_POOL_SIZE,
    TV_WEIGHT,
)
from .errors import ChannelModeError, ConsistencyError
from .perceptual import FeatureExtractor, cosine_similarity, perceptual_loss
from .sample import ChannelMode, FmriVector, RgbdSample

_LOGGER = logging.getLogger(__name__)

Raster = Union[RgbdSample, torch.Tensor]
Response = Union[FmriVector, torch.Tensor]


class Encoder(nn.Module):
    """Define Enc: the first blocks of a recognition network plus a linear head.

    The backbone is a copy of the extractor's first `backbone_blocks`
    blocks; the head pools their output to `pool_size` x `pool_size` and
    maps it linearly onto one value per voxel.
    """

    def __init__(
        self,
        extractor: Dict,
        voxel_ids: Sequence[int],
        backbone_blocks: int = ENCODER_BACKBONE_BLOCKS,
        pool_size: int = ENCODER_POOL_SIZE,
        freeze_backbone: bool = True,
    ) -> None:
        super().__init__()
        if not 1 <= backbone_blocks <= len(extractor["widths"]):
            raise ConsistencyError(
                f"backbone_blocks must lie in 1..{len(extractor['widths'])}"
            )
        self._config = {
            "extractor": dict(extractor),
            "voxel_ids": [int(v) for v in voxel_ids],
            "backbone_blocks": int(backbone_blocks),
            "pool_size": int(pool_size),
            "freeze_backbone": bool(freeze_backbone),
        }
        source = FeatureExtractor.from_config(**extractor)
        self.backbone = nn.ModuleList(source.blocks[:backbone_blocks])
        width = extractor["widths"][backbone_blocks - 1]
        self.head = nn.Sequential(
            nn.AdaptiveAvgPool2d(pool_size),
            nn.Flatten(),
            nn.Linear(width * pool_size * pool_size, len(voxel_ids)),
        )
        if freeze_backbone:
            self.backbone.requires_grad_(False)

    @classmethod
    def from_config(cls, **config) -> "Encoder":
        """Build an untrained encoder from its constructor arguments."""
        return cls(**config)

    @classmethod
    def from_extractor(
        cls,
        extractor: FeatureExtractor,
        voxel_ids: Sequence[int],
        backbone_blocks: int = ENCODER_BACKBONE_BLOCKS,
        pool_size: int = ENCODER_POOL_SIZE,
        freeze_backbone: bool = True,
    ) -> "Encoder":
        """Build an encoder whose backbone holds the pretrained extractor weights."""
        encoder = cls(
            extractor.config(), voxel_ids, backbone_blocks, pool_size, freeze_backbone
        )
        for target, source in zip(encoder.backbone, extractor.blocks):
            target.load_state_dict(copy.deepcopy(source.state_dict()))
        return encoder

    def config(self) -> Dict:
        """Return the constructor arguments."""
        return copy.deepcopy(self._config)

    @property
    def input_channels(self) -> int:
        """Return the stimulus channel count."""
        return self._config["extractor"]["input_channels"]

    @property
    def mode(self) -> ChannelMode:
        """Return the stimulus channel mode."""
        return ChannelMode.for_channels(self.input_channels)

    @property
    def voxel_ids(self) -> Tuple[int, ...]:
        """Return the ids of the predicted voxels."""
        return tuple(self._config["voxel_ids"])

    def train(self, mode: bool = True) -> "Encoder":
        super().train(mode)
        if self._config["freeze_backbone"]:
            self.backbone.eval()
        return self

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Return the N x V predicted responses of an N x C x H x W batch."""
        if x.dim() != 4 or x.shape[1] != self.input_channels:
            raise ChannelModeError(
                f"Encoder reads N x {self.input_channels} x H x W, got {tuple(x.shape)}"
            )
        for block in self.backbone:
            x = block(x)
        return self.head(x)


class Decoder(nn.Module):
    """Define Dec: a linear lift to a coarse grid and nearest-upsample conv stages.

    The coarse grid is resolution / 2^stages, so at 112 x 112 with 4 stages
    the lift produces a 7 x 7 map. A sigmoid bounds the output to [0, 1].
    """

    def __init__(
        self,
        voxel_ids: Sequence[int],
        mode: Union[ChannelMode, str],
        resolution: Sequence[int],
        width: int = DECODER_WIDTH,
        stages: int = DECODER_UPSAMPLE_STAGES,
    ) -> None:
        super().__init__()
        mode = ChannelMode(mode)
        height, wide = (int(side) for side in resolution)
        scale = 2**stages
        if height % scale or wide % scale:
            raise ConsistencyError(
                f"Resolution {height}x{wide} is not divisible by {scale}"
            )
        self._config = {
            "voxel_ids": [int(v) for v in voxel_ids],
            "mode": mode.value,
            "resolution": [height, wide],
            "width": int(width),
            "stages": int(stages),
        }
        self._grid = (height // scale, wide // scale)
        self.lift = nn.Linear(len(voxel_ids), width * self._grid[0] * self._grid[1])
        layers = []  # type: List[nn.Module]
        in_channels = width
        for stage in range(stages):
            out_channels = max(8, width // 2 ** (stage // 2))
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(in_channels, out_channels, 3, padding=1),
                nn.LeakyReLU(0.2),
            ]
            in_channels = out_channels
        layers.append(nn.Conv2d(in_channels, mode.channels, 3, padding=1))
        self.upsample = nn.Sequential(*layers)

    @classmethod
    def from_config(cls, **config) -> "Decoder":
        """Build an untrained decoder from its constructor arguments."""
        return cls(**config)

    def config(self) -> Dict:
        """Return the constructor arguments."""
        return copy.deepcopy(self._config)

    @property
    def mode(self) -> ChannelMode:
        """Return the reconstructed channel mode."""
        return ChannelMode(self._config["mode"])

    @property
    def voxel_ids(self) -> Tuple[int, ...]:
        """Return the ids of the voxels the decoder reads."""
        return tuple(self._config["voxel_ids"])

    @property
    def resolution(self) -> Tuple[int, int]:
        """Return the reconstructed (H, W)."""
        return tuple(self._config["resolution"])

    def forward(self, r: torch.Tensor) -> torch.Tensor:
        """Return the N x C x H x W reconstructions of N x V responses."""
        if r.dim() != 2 or r.shape[1] != len(self._config["voxel_ids"]):
            raise ChannelModeError(
                f"Decoder reads N x {len(self._config['voxel_ids'])}, got {tuple(r.shape)}"
            )
        grid = self.lift(r).view(r.shape[0], -1, *self._grid)
        return torch.sigmoid(self.upsample(F.leaky_relu(grid, 0.2)))


def _values(r: Response) -> torch.Tensor:
    values = r.values if isinstance(r, FmriVector) else r
    return values if values.dim() == 2 else values.unsqueeze(0)


def _batch(s: Raster) -> torch.Tensor:
    raster = s.raster if isinstance(s, RgbdSample) else s
    return raster if raster.dim() == 4 else raster.unsqueeze(0)


def encoder_loss_terms(
    r_hat: Response, r: Response, alpha: float = ALPHA
) -> Dict[str, torch.Tensor]:
    """Return the mse, cosine and total terms of the fMRI loss."""
    predicted, target = _values(r_hat), _values(r)
    if predicted.shape != target.shape:
        raise ConsistencyError(
            f"Response shapes differ: {tuple(predicted.shape)} vs {tuple(target.shape)}"
        )
    mse = torch.mean((predicted - target) ** 2)
    cosine = cosine_similarity(predicted, target, dim=1).mean()
    return {"mse": mse, "cosine": cosine, "total": alpha * mse - (1.0 - alpha) * cosine}


def encoder_loss(r_hat: Response, r: Response, alpha: float = ALPHA) -> torch.Tensor:
    """Return alpha * MSE(r_hat, r) - (1 - alpha) * cos(r_hat, r).

    Batched inputs average the cosine over rows and the squared error over
    every element.
    """
    return encoder_loss_terms(r_hat, r, alpha)["total"]


def tv_regularizer(
    s_hat: Raster, weight: float = TV_WEIGHT, reduction: str = "mean"
) -> torch.Tensor:
    """Return weight * mean |neighbour difference| over horizontal and vertical pairs."""
    x = _batch(s_hat)
    horizontal = torch.abs(x[..., :, 1:] - x[..., :, :-1]).flatten(1)
    vertical = torch.abs(x[..., 1:, :] - x[..., :-1, :]).flatten(1)
    pairs = horizontal.shape[1] + vertical.shape[1]
    if pairs == 0:
        per_sample = x.new_zeros(x.shape[0])
    else:
        per_sample = weight * (horizontal.sum(dim=1) + vertical.sum(dim=1)) / pairs
    return per_sample.mean() if reduction == "mean" else per_sample


def image_loss_terms(
    s_hat: Raster,
    s: Raster,
    extractor: FeatureExtractor,
    tv_weight: float = TV_WEIGHT,
    cosine: str = "flattened",
) -> Dict[str, torch.Tensor]:
    """Return the l1, perceptual, tv and total terms of the image loss."""
    predicted, target = _batch(s_hat), _batch(s)
    if predicted.shape != target.shape:
        raise ChannelModeError(
            f"Shapes differ: {tuple(predicted.shape)} vs {tuple(target.shape)}"
        )
    l1 = torch.mean(torch.abs(predicted - target))
    perceptual = perceptual_loss(predicted, target, extractor, cosine)
    tv = tv_regularizer(predicted, tv_weight)
    return {"l1": l1, "perceptual": perceptual, "tv": tv, "total": l1 + perceptual + tv}


def image_loss(
    s_hat: Raster,
    s: Raster,
    extractor: FeatureExtractor,
    tv_weight: float = TV_WEIGHT,
    cosine: str = "flattened",
) -> torch.Tensor:
    """Return mean l1 + perceptual loss + TV of the reconstruction."""
    return image_loss_terms(s_hat, s, extractor, tv_weight, cosine)["total"]


def encode(encoder: Encoder, s: Raster) -> Response:
    """Return Enc(s); a sample yields an FmriVector, a batch a tensor."""
    with torch.no_grad():
        device = next(encoder.parameters()).device
        values = encoder(_batch(s).to(device)).cpu()
    if isinstance(s, RgbdSample):
        return FmriVector(values[0], encoder.voxel_ids)
    return values


def decode(decoder: Decoder, r: Response) -> Raster:
    """Return Dec(r); an FmriVector yields an RgbdSample, a batch a tensor."""
    if isinstance(r, FmriVector) and r.voxel_ids != decoder.voxel_ids:
        raise ConsistencyError("Response voxel ids differ from the decoder's")
    with torch.no_grad():
        device = next(decoder.parameters()).device
        raster = decoder(_values(r).to(device)).cpu()
    if isinstance(r, FmriVector):
        return RgbdSample(raster[0], decoder.mode)
    return raster


def decode_all(
    decoder: Decoder, responses: torch.Tensor, batch_size: int = 64
) -> torch.Tensor:
    """Return the reconstructions of N x V responses in batches."""
    decoder.eval()
    chunks = [
        decode(decoder, responses[start : start + batch_size])
        for start in range(0, len(responses), batch_size)
    ]
    return torch.cat(chunks) if chunks else responses.new_zeros((0,))


def encode_all(
    encoder: Encoder, stimuli: torch.Tensor, batch_size: int = 64
) -> torch.Tensor:
    """Return the predicted responses of N x C x H x W stimuli in batches."""
    encoder.eval()
    chunks = [
        encode(encoder, stimuli[start : start + batch_size])
        for start in range(0, len(stimuli), batch_size)
    ]
    return torch.cat(chunks) if chunks else stimuli.new_zeros((0,))
