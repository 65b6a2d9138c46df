"""Score reconstructions by n-way rank identification with bootstrap intervals."""
from dataclasses import asdict, dataclass, field
import json
import logging
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np
from scipy import stats
import torch

from .const import (
    BOOTSTRAP_ITERATIONS,
    CONFIDENCE_LEVEL,
    MIN_BOOTSTRAP_ITERATIONS,
    N_WAY_LIST,
)
from .depth import DepthEstimator, estimate_depth
from .encdec import Decoder, decode_all
from .errors import (
    ChannelModeError,
    ConsistencyError,
    DatasetFormatError,
    DuplicateCandidateError,
    InsufficientPoolError,
)
from .fileio import PathLike
from .perceptual import FeatureExtractor, extract_features, pyramid_loss
from .sample import (
    ChannelMode,
    Example,
    PairedExample,
    RgbdSample,
    select_channels,
    stack_responses,
)

_LOGGER = logging.getLogger(__name__)

METRIC_MODES = {
    ChannelMode.DEPTH: "depth",
    ChannelMode.RGB: "rgb",
    ChannelMode.RGBD: "rgbd",
}


@dataclass
class RankResult:
    """Define the n-way ranks of a test set with their aggregate."""

    n: int
    item_ids: Tuple[str, ...]
    ranks: Tuple[float, ...]
    ties: Tuple[int, ...]
    mean: float
    ci: Tuple[float, float]
    metric_mode: str
    seed: int
    extra: Dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.item_ids = tuple(self.item_ids)
        self.ranks = tuple(float(r) for r in self.ranks)
        self.ties = tuple(int(t) for t in self.ties)
        self.ci = (float(self.ci[0]), float(self.ci[1]))

    @property
    def chance(self) -> float:
        """Return the expected rank of an uninformative reconstruction."""
        return (self.n + 1) / 2.0

    def as_dict(self) -> Dict:
        """Return a JSON-serializable mapping."""
        payload = asdict(self)
        payload["item_ids"] = list(self.item_ids)
        payload["ranks"] = list(self.ranks)
        payload["ties"] = list(self.ties)
        payload["ci"] = list(self.ci)
        payload["chance"] = self.chance
        return payload

    @classmethod
    def from_dict(cls, payload: Mapping) -> "RankResult":
        """Rebuild a result written by `as_dict`."""
        fields = dict(payload)
        fields.pop("chance", None)
        return cls(**fields)


def rank_from_losses(true_loss: float, distractor_losses: Sequence[float]) -> Tuple[float, int]:
    """Return (rank, ties): 1 + strictly smaller distractors + half the ties."""
    losses = np.asarray(distractor_losses, dtype=np.float64)
    smaller = int(np.sum(losses < true_loss))
    ties = int(np.sum(losses == true_loss))
    return 1.0 + smaller + 0.5 * ties, ties


def _check_candidates(truth: Example, distractors: Sequence[Example]) -> None:
    ids = [truth.item_id] + [d.item_id for d in distractors]
    if len(set(ids)) != len(ids):
        repeated = sorted({i for i in ids if ids.count(i) > 1})
        raise DuplicateCandidateError(f"Repeated candidate ids: {', '.join(repeated)}")


def _raster(x: Union[RgbdSample, torch.Tensor]) -> torch.Tensor:
    return x.raster if isinstance(x, RgbdSample) else x


def _candidate_raster(example: Example, mode: ChannelMode) -> torch.Tensor:
    return select_channels(example.stimulus.raster, example.stimulus.mode, mode)


@torch.no_grad()
def _losses(
    recon: torch.Tensor,
    candidates: torch.Tensor,
    extractor: FeatureExtractor,
    cosine: str,
    batch_size: int,
) -> np.ndarray:
    """Return the perceptual loss of `recon` against every candidate."""
    device = next(extractor.parameters()).device
    recon_pyramid = extract_features(recon.unsqueeze(0).to(device), extractor)
    values = []
    for start in range(0, len(candidates), batch_size):
        batch = candidates[start : start + batch_size].to(device)
        expanded = type(recon_pyramid)(
            tuple(level.expand(len(batch), *level.shape[1:]) for level in recon_pyramid.levels)
        )
        values.append(
            pyramid_loss(expanded, extract_features(batch, extractor), cosine, "none").cpu()
        )
    return torch.cat(values).double().numpy()


def rank_identify(
    recon: Union[RgbdSample, torch.Tensor],
    truth: Example,
    distractors: Sequence[Example],
    extractor: FeatureExtractor,
    cosine: str = "flattened",
    batch_size: int = 64,
) -> float:
    """Return the rank of `truth` among itself and `distractors`.

    Candidates are ordered by their perceptual loss against `recon`; a
    distractor with exactly the true loss counts as half a position.

    Raises:
        DuplicateCandidateError: two candidates share an item id.
    """
    if not distractors:
        raise InsufficientPoolError(1, 0)
    _check_candidates(truth, distractors)
    extractor.eval()
    mode = extractor.mode
    recon = _raster(recon)
    if recon.shape[0] != mode.channels:
        raise ChannelModeError(
            f"Reconstruction has {recon.shape[0]} channels, extractor reads {mode.channels}"
        )
    candidates = torch.stack(
        [_candidate_raster(truth, mode)] + [_candidate_raster(d, mode) for d in distractors]
    )
    losses = _losses(recon, candidates, extractor, cosine, batch_size)
    rank, _ = rank_from_losses(losses[0], losses[1:])
    return rank


def bootstrap_ci(
    ranks: Sequence[float],
    iterations: int = BOOTSTRAP_ITERATIONS,
    level: float = CONFIDENCE_LEVEL,
    seed: int = 0,
) -> Tuple[float, float]:
    """Return the percentile bootstrap interval of the mean rank.

    The interval always contains the sample mean.

    Raises:
        ConsistencyError: no ranks, fewer than 1000 resamples or a level
            outside (0, 1).
    """
    if iterations < MIN_BOOTSTRAP_ITERATIONS:
        raise ConsistencyError(
            f"Bootstrap needs at least {MIN_BOOTSTRAP_ITERATIONS} resamples, got {iterations}"
        )
    if not 0.0 < level < 1.0:
        raise ConsistencyError(f"Confidence level must lie in (0, 1), got {level}")
    values = np.asarray(ranks, dtype=np.float64)
    if values.size == 0:
        raise ConsistencyError("Bootstrap needs at least one rank")
    mean = float(values.mean())
    if values.size == 1 or np.all(values == values[0]):
        return mean, mean
    result = stats.bootstrap(
        (values,),
        np.mean,
        n_resamples=iterations,
        confidence_level=level,
        method="percentile",
        rng=np.random.default_rng(seed),
    )
    low = float(result.confidence_interval.low)
    high = float(result.confidence_interval.high)
    return min(low, mean), max(high, mean)


def _draw_distractors(pool_size: int, count: int, seed: int, index: int) -> np.ndarray:
    """Return `count` pool indices for test item `index`; smaller n take a prefix."""
    return np.random.default_rng([seed, index]).permutation(pool_size)[:count]


def evaluate_reconstructions(
    reconstructions: Mapping[str, torch.Tensor],
    paired_test: Sequence[PairedExample],
    candidate_pool: Sequence[Example],
    extractor: FeatureExtractor,
    n_list: Sequence[int] = N_WAY_LIST,
    seed: int = 0,
    iterations: int = BOOTSTRAP_ITERATIONS,
    level: float = CONFIDENCE_LEVEL,
    cosine: str = "flattened",
    batch_size: int = 64,
) -> Dict[int, RankResult]:
    """Rank every test item's reconstruction among n candidates, for each n.

    Args:
        reconstructions: item_id -> C x H x W raster in the extractor's mode.
        paired_test: Test items whose stimuli are the true candidates.
        candidate_pool: Items distractors are drawn from; never the test set.
        extractor: Recognition network defining the similarity.
        n_list: Candidate counts; each n uses n - 1 distractors.
        seed: Distractor and bootstrap seed.
        iterations: Bootstrap resamples.
        level: Confidence level of the interval.
        cosine: Block cosine variant.
        batch_size: Candidates per extractor batch.

    Returns:
        One RankResult per n.

    Raises:
        InsufficientPoolError: the pool holds fewer than max(n) - 1 items.
        DuplicateCandidateError: pool items share ids with the test set.
    """
    n_list = sorted(set(int(n) for n in n_list))
    required = n_list[-1] - 1
    if len(candidate_pool) < required:
        raise InsufficientPoolError(required, len(candidate_pool))
    test_ids = {example.item_id for example in paired_test}
    overlap = sorted(test_ids & {c.item_id for c in candidate_pool})
    if overlap:
        raise DuplicateCandidateError(
            f"Candidate pool holds test items: {', '.join(overlap[:10])}"
        )
    extractor.eval()
    mode = extractor.mode
    metric_mode = METRIC_MODES[mode]

    ranks = {n: [] for n in n_list}  # type: Dict[int, List[float]]
    ties = {n: [] for n in n_list}  # type: Dict[int, List[int]]
    item_ids = []
    for index, example in enumerate(paired_test):
        recon = _raster(reconstructions[example.item_id])
        if recon.shape[0] != mode.channels:
            raise ChannelModeError(
                f"Reconstruction {example.item_id} has {recon.shape[0]} channels, "
                f"extractor reads {mode.channels}"
            )
        drawn = _draw_distractors(len(candidate_pool), required, seed, index)
        candidates = torch.stack(
            [_candidate_raster(example, mode)]
            + [_candidate_raster(candidate_pool[int(i)], mode) for i in drawn]
        )
        losses = _losses(recon, candidates, extractor, cosine, batch_size)
        for n in n_list:
            rank, tied = rank_from_losses(losses[0], losses[1:n])
            ranks[n].append(rank)
            ties[n].append(tied)
        item_ids.append(example.item_id)
        _LOGGER.debug("Ranked %s: %s", example.item_id, {n: ranks[n][-1] for n in n_list})

    results = {}
    for n in n_list:
        mean = float(np.mean(ranks[n]))
        results[n] = RankResult(
            n=n,
            item_ids=tuple(item_ids),
            ranks=tuple(ranks[n]),
            ties=tuple(ties[n]),
            mean=mean,
            ci=bootstrap_ci(ranks[n], iterations, level, seed),
            metric_mode=metric_mode,
            seed=seed,
        )
        _LOGGER.info(
            "%s-way %s rank: mean %.2f, CI [%.2f, %.2f] (chance %.1f)",
            n,
            metric_mode,
            mean,
            results[n].ci[0],
            results[n].ci[1],
            results[n].chance,
        )
    return results


def reconstruct_testset(
    decoder: Decoder, paired_test: Sequence[PairedExample], batch_size: int = 64
) -> Dict[str, torch.Tensor]:
    """Return item_id -> Dec(r) for every test item."""
    rasters = decode_all(decoder, stack_responses(paired_test), batch_size)
    return {example.item_id: raster for example, raster in zip(paired_test, rasters)}


def evaluate_testset(
    decoder: Decoder,
    paired_test: Sequence[PairedExample],
    candidate_pool: Sequence[Example],
    extractor: FeatureExtractor,
    n_list: Sequence[int] = N_WAY_LIST,
    config=None,
    cosine: str = "flattened",
) -> Dict[int, RankResult]:
    """Decode the test responses and rank them in the extractor's channel mode.

    An RGBD decoder is scored on its depth channel by a depth extractor and
    on its color channels by an RGB extractor.
    """
    seed = config.seed if config is not None else 0
    iterations = config.bootstrap_iterations if config is not None else BOOTSTRAP_ITERATIONS
    level = config.confidence_level if config is not None else CONFIDENCE_LEVEL
    batch_size = config.batch_size if config is not None else 64
    recons = reconstruct_testset(decoder, paired_test, batch_size)
    projected = {
        item_id: select_channels(raster, decoder.mode, extractor.mode)
        for item_id, raster in recons.items()
    }
    return evaluate_reconstructions(
        projected,
        paired_test,
        candidate_pool,
        extractor,
        n_list,
        seed,
        iterations,
        level,
        cosine,
        batch_size,
    )


def indirect_depth_eval(
    rgb_decoder: Decoder,
    depth_estimator: DepthEstimator,
    paired_test: Sequence[PairedExample],
    candidate_pool: Sequence[Example],
    depth_extractor: FeatureExtractor,
    n_list: Sequence[int] = N_WAY_LIST,
    config=None,
    cosine: str = "flattened",
) -> Dict[int, RankResult]:
    """Rank depth estimated from reconstructed RGB against candidate depth maps."""
    if rgb_decoder.mode is not ChannelMode.RGB:
        raise ChannelModeError("Indirect depth evaluation needs a 3-channel decoder")
    if depth_extractor.mode is not ChannelMode.DEPTH:
        raise ChannelModeError("Indirect depth evaluation needs a depth extractor")
    batch_size = config.batch_size if config is not None else 64
    recons = reconstruct_testset(rgb_decoder, paired_test, batch_size)
    ids = list(recons)
    depths = estimate_depth(depth_estimator, torch.stack([recons[i] for i in ids]), batch_size)
    return evaluate_reconstructions(
        dict(zip(ids, depths)),
        paired_test,
        candidate_pool,
        depth_extractor,
        n_list,
        config.seed if config is not None else 0,
        config.bootstrap_iterations if config is not None else BOOTSTRAP_ITERATIONS,
        config.confidence_level if config is not None else CONFIDENCE_LEVEL,
        cosine,
        batch_size,
    )


def write_report(
    path: PathLike,
    results: Mapping[str, Mapping[int, RankResult]],
    **metadata,
) -> Path:
    """Write metric_mode -> n -> RankResult as a JSON report."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        **metadata,
        "results": {
            metric: {str(n): result.as_dict() for n, result in sorted(by_n.items())}
            for metric, by_n in results.items()
        },
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _LOGGER.info("Wrote rank report %s", path)
    return path


def read_report(path: PathLike) -> Tuple[Dict[str, Dict[int, RankResult]], Dict]:
    """Return (metric_mode -> n -> RankResult, metadata) of a JSON report."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        results = {
            metric: {int(n): RankResult.from_dict(entry) for n, entry in by_n.items()}
            for metric, by_n in payload.pop("results").items()
        }
    except (OSError, ValueError, KeyError, TypeError) as err:
        raise DatasetFormatError(path, f"not a rank report ({err})") from err
    return results, payload


def summary_table(results: Mapping[str, Mapping[int, RankResult]]) -> List[Dict]:
    """Return one row per (metric_mode, n) with mean, interval and chance."""
    return [
        {
            "metric_mode": metric,
            "n": n,
            "mean": result.mean,
            "ci_low": result.ci[0],
            "ci_high": result.ci[1],
            "chance": result.chance,
            "items": len(result.ranks),
        }
        for metric, by_n in results.items()
        for n, result in sorted(by_n.items())
    ]
