"""Measure voxel depth sensitivity and compare ROI-restricted pipelines."""
from dataclasses import dataclass, field, replace
import json
import logging
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats
import torch

from .const import (
    COLOR_CHANNELS,
    DEPTH_CHANNEL,
    REGION_OTHER,
    VDSI_CLIP,
    VDSI_EPS,
)
from .dataset import DatasetSplits, normalize_splits
from .errors import (
    ChannelModeError,
    ConsistencyError,
    DatasetFormatError,
    InsufficientVoxelsError,
)
from .evaluation import RankResult, evaluate_testset
from .fileio import PathLike
from .fitting import ProgressLog
from .perceptual import FeatureExtractor
from .sample import ChannelMode, VoxelMask
from .training import train_decoder_phase2, train_encoder_phase1

_LOGGER = logging.getLogger(__name__)

FILL_ZERO = "zero"
FILL_DATASET_MEAN = "dataset_mean"


@dataclass
class VdsiReport:
    """Define the per-voxel depth sensitivity of an encoder on a sample set.

    `sentinel` marks voxels whose color response vanished, so their index
    was clipped; `degenerate` is set when that happened for every voxel.
    """

    voxel_ids: Tuple[int, ...]
    vdsi: np.ndarray
    regions: Tuple[str, ...]
    sentinel: np.ndarray
    depth_change: np.ndarray
    color_change: np.ndarray
    samples: int
    fill: str = FILL_ZERO
    degenerate: bool = False
    metadata: Dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.voxel_ids)

    @property
    def by_region(self) -> Dict[str, np.ndarray]:
        """Return only those VDSI values grouped by region label."""
        regions = np.asarray(self.regions)
        return {
            region: self.vdsi[regions == region] for region in sorted(set(self.regions))
        }

    def values_for(self, voxel_ids: Sequence[int]) -> np.ndarray:
        """Return the VDSI of `voxel_ids`, in that order."""
        position = {voxel: idx for idx, voxel in enumerate(self.voxel_ids)}
        return self.vdsi[[position[int(v)] for v in voxel_ids]]

    def to_frame(self) -> pd.DataFrame:
        """Return one row per voxel."""
        return pd.DataFrame(
            {
                "voxel_id": list(self.voxel_ids),
                "region": list(self.regions),
                "vdsi": self.vdsi,
                "sentinel": self.sentinel,
                "depth_change": self.depth_change,
                "color_change": self.color_change,
            }
        )

    def as_dict(self) -> Dict:
        """Return a JSON-serializable mapping."""
        return {
            "voxels": self.to_frame().to_dict(orient="records"),
            "samples": self.samples,
            "fill": self.fill,
            "degenerate": self.degenerate,
            "sentinels": int(self.sentinel.sum()),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "VdsiReport":
        """Rebuild a report written by `as_dict`."""
        frame = pd.DataFrame(payload["voxels"])
        return cls(
            voxel_ids=tuple(int(v) for v in frame["voxel_id"]),
            vdsi=frame["vdsi"].to_numpy(dtype=np.float64),
            regions=tuple(str(r) for r in frame["region"]),
            sentinel=frame["sentinel"].to_numpy(dtype=bool),
            depth_change=frame["depth_change"].to_numpy(dtype=np.float64),
            color_change=frame["color_change"].to_numpy(dtype=np.float64),
            samples=int(payload["samples"]),
            fill=payload.get("fill", FILL_ZERO),
            degenerate=bool(payload.get("degenerate", False)),
            metadata=dict(payload.get("metadata", {})),
        )

    def save(self, path: PathLike) -> Path:
        """Write the report as JSON."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.as_dict(), indent=2) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: PathLike) -> "VdsiReport":
        """Read a report written by `save`."""
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, ValueError, KeyError) as err:
            raise DatasetFormatError(path, f"not a VDSI report ({err})") from err


@dataclass(frozen=True)
class Agreement:
    """Define the Pearson agreement of two VDSI reports."""

    correlation: float
    voxels: int
    excluded: int


def _fill_values(samples: torch.Tensor, fill: str) -> torch.Tensor:
    if fill == FILL_ZERO:
        return samples.new_zeros(samples.shape[1])
    if fill == FILL_DATASET_MEAN:
        return samples.mean(dim=(0, 2, 3))
    raise ConsistencyError(f"Unknown fill {fill}, expected {FILL_ZERO} or {FILL_DATASET_MEAN}")


@torch.no_grad()
def compute_vdsi(
    encoder: Callable[[torch.Tensor], torch.Tensor],
    samples: torch.Tensor,
    voxel_ids: Optional[Sequence[int]] = None,
    mask: Optional[VoxelMask] = None,
    fill: str = FILL_ZERO,
    eps: float = VDSI_EPS,
    clip: float = VDSI_CLIP,
    batch_size: int = 64,
) -> VdsiReport:
    """Return each voxel's response change under depth zeroing over color zeroing.

    For every sample the encoder output is compared with the output after
    one channel is replaced by the fill value. The depth change is averaged
    over samples; the color change over samples and then the three color
    channels. The index is depth / (color + eps), clipped at `clip`.

    Args:
        encoder: Module mapping N x 4 x H x W stimuli to N x V responses.
        samples: N x 4 x H x W RGBD stimuli as the encoder sees them.
        voxel_ids: Output ids; the encoder's own when it carries them.
        mask: Region labels for the report.
        fill: "zero" or "dataset_mean" replacement value.
        eps: Denominator stabilizer.
        clip: Upper bound of the index.
        batch_size: Samples per encoder call.
    """
    if samples.dim() != 4 or samples.shape[1] != 4:
        raise ChannelModeError(
            f"VDSI needs N x 4 x H x W RGBD samples, got {tuple(samples.shape)}"
        )
    if len(samples) == 0:
        raise ConsistencyError("VDSI needs at least one sample")
    channels = getattr(encoder, "input_channels", 4)
    if channels != 4:
        raise ChannelModeError(f"VDSI needs an RGBD encoder, got {channels} input channels")
    device = samples.device
    if isinstance(encoder, torch.nn.Module):
        encoder.eval()
        parameter = next(encoder.parameters(), None)
        device = parameter.device if parameter is not None else device
    fills = _fill_values(samples, fill)

    changes = None
    for start in range(0, len(samples), batch_size):
        batch = samples[start : start + batch_size].to(device)
        reference = encoder(batch).double()
        batch_changes = []
        for channel in range(4):
            zeroed = batch.clone()
            zeroed[:, channel] = float(fills[channel])
            batch_changes.append(torch.abs(reference - encoder(zeroed).double()).sum(dim=0))
        stacked = torch.stack(batch_changes).cpu()
        changes = stacked if changes is None else changes + stacked
    changes = (changes / len(samples)).numpy()

    depth_change = changes[3]
    color_change = changes[:3].mean(axis=0)
    raw = depth_change / (color_change + eps)
    sentinel = (raw >= clip) | ((color_change <= eps) & (depth_change > eps))
    vdsi = np.where(sentinel, clip, raw)
    degenerate = bool(np.all(color_change <= eps))
    if degenerate:
        _LOGGER.warning("Every voxel ignores the color channels; VDSI report is degenerate")

    if voxel_ids is None:
        voxel_ids = getattr(encoder, "voxel_ids", None) or range(len(vdsi))
    voxel_ids = tuple(int(v) for v in voxel_ids)
    if len(voxel_ids) != len(vdsi):
        raise ConsistencyError(f"{len(voxel_ids)} voxel ids for {len(vdsi)} outputs")
    labels = mask.region_labels if mask is not None else {}
    report = VdsiReport(
        voxel_ids=voxel_ids,
        vdsi=vdsi,
        regions=tuple(labels.get(v, REGION_OTHER) for v in voxel_ids),
        sentinel=sentinel,
        depth_change=depth_change,
        color_change=color_change,
        samples=len(samples),
        fill=fill,
        degenerate=degenerate,
    )
    _LOGGER.info(
        "VDSI over %s samples: median %.3f, %s sentinel voxels (channels %s vs %s)",
        len(samples),
        float(np.median(vdsi)),
        int(sentinel.sum()),
        DEPTH_CHANNEL,
        "".join(COLOR_CHANNELS),
    )
    return report


def vdsi_agreement(report_a: VdsiReport, report_b: VdsiReport) -> Agreement:
    """Return the Pearson correlation of two reports over shared non-sentinel voxels.

    Raises:
        ConsistencyError: the reports cover different voxels.
        InsufficientVoxelsError: fewer than 3 voxels remain.
    """
    if set(report_a.voxel_ids) != set(report_b.voxel_ids):
        raise ConsistencyError("VDSI reports cover different voxel sets")
    voxel_ids = list(report_a.voxel_ids)
    b_position = {voxel: idx for idx, voxel in enumerate(report_b.voxel_ids)}
    b_index = [b_position[v] for v in voxel_ids]
    a_values, b_values = report_a.vdsi, report_b.vdsi[b_index]
    keep = ~report_a.sentinel & ~report_b.sentinel[b_index]
    keep &= np.isfinite(a_values) & np.isfinite(b_values)
    if int(keep.sum()) < 3:
        raise InsufficientVoxelsError(
            f"Only {int(keep.sum())} comparable voxels, at least 3 are needed"
        )
    result = stats.pearsonr(a_values[keep], b_values[keep])
    agreement = Agreement(
        correlation=float(result.statistic),
        voxels=int(keep.sum()),
        excluded=int((~keep).sum()),
    )
    _LOGGER.info(
        "VDSI agreement %.3f over %s voxels (%s excluded)",
        agreement.correlation,
        agreement.voxels,
        agreement.excluded,
    )
    return agreement


def roi_restricted_pipeline(
    splits: DatasetSplits,
    mask: VoxelMask,
    region_set: str,
    extractor: FeatureExtractor,
    config,
    depth_extractor: Optional[FeatureExtractor] = None,
    progress: Optional[ProgressLog] = None,
) -> Dict[int, RankResult]:
    """Retrain encoder and decoder on one region set and rank their depth.

    Args:
        splits: Dataset with raw (not yet z-scored) responses, in the
            channel mode the extractor reads.
        mask: Region labels covering every dataset voxel.
        region_set: ALL, LVC or HVC.
        extractor: Recognition network for training.
        config: Full configuration.
        depth_extractor: Depth network for ranking; `extractor` when None.
        progress: Optional per-step record sink.

    Raises:
        EmptyRegionError: the region set holds no voxels.
    """
    mask.covers(splits.voxel_ids)
    selected = mask.select(region_set)
    restricted = replace(splits.restrict_voxels(selected), mask=mask)
    restricted, _ = normalize_splits(restricted)
    _LOGGER.info("Training on %s: %s voxels", region_set, len(selected))
    encoder = train_encoder_phase1(
        restricted.paired_train, extractor, config, progress=progress
    ).model
    decoder = train_decoder_phase2(
        restricted.paired_train,
        restricted.unpaired,
        encoder,
        extractor,
        config,
        progress=progress,
        phase=f"decoder_{region_set.lower()}",
    ).model
    ranking = depth_extractor or extractor
    if ranking.mode is not ChannelMode.DEPTH and splits.mode is ChannelMode.RGBD:
        _LOGGER.warning("ROI ranking uses a %s extractor, not depth", ranking.mode.value)
    results = evaluate_testset(
        decoder,
        restricted.paired_test,
        restricted.unpaired,
        ranking,
        config.evaluation.n_list,
        config.evaluation,
        config.features.cosine,
    )
    for result in results.values():
        result.extra.update({"region_set": region_set, "voxels": len(selected)})
    return results


def roi_comparison(
    splits: DatasetSplits,
    mask: VoxelMask,
    region_sets: Sequence[str],
    extractor: FeatureExtractor,
    config,
    depth_extractor: Optional[FeatureExtractor] = None,
    progress: Optional[ProgressLog] = None,
) -> Tuple[pd.DataFrame, Dict[str, Dict[int, RankResult]]]:
    """Run the ROI-restricted pipeline per region set and tabulate mean depth ranks."""
    results = {}
    rows = []  # type: List[Dict]
    for region_set in region_sets:
        by_n = roi_restricted_pipeline(
            splits, mask, region_set, extractor, config, depth_extractor, progress
        )
        results[region_set] = by_n
        for n, result in sorted(by_n.items()):
            rows.append(
                {
                    "region_set": region_set,
                    "voxels": result.extra["voxels"],
                    "n": n,
                    "mean_rank": result.mean,
                    "ci_low": result.ci[0],
                    "ci_high": result.ci[1],
                    "chance": result.chance,
                }
            )
    return pd.DataFrame(rows), results
