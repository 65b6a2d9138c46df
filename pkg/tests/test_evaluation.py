"""Tests for n-way rank identification."""
import numpy as np
import pytest
import torch
from torch import nn

from depthdecode.config import EvaluationConfig
from depthdecode.depth import DepthEstimator
from depthdecode.encdec import Decoder
from depthdecode.errors import (
    ChannelModeError,
    ConsistencyError,
    DuplicateCandidateError,
    InsufficientPoolError,
)
from depthdecode.evaluation import (
    RankResult,
    bootstrap_ci,
    evaluate_reconstructions,
    evaluate_testset,
    indirect_depth_eval,
    rank_from_losses,
    rank_identify,
    read_report,
    summary_table,
    write_report,
)
from depthdecode.sample import ChannelMode, FmriVector, PairedExample, RgbdSample, UnpairedExample


def _items(count, prefix, mode=ChannelMode.RGBD, seed=0):
    generator = torch.Generator().manual_seed(seed)
    return [
        UnpairedExample(
            RgbdSample(torch.rand(mode.channels, 32, 32, generator=generator), mode),
            f"{prefix}_{idx}",
        )
        for idx in range(count)
    ]


def _test_set(count, mode=ChannelMode.RGBD):
    return [
        PairedExample(
            item.stimulus, FmriVector(torch.tensor([float(idx), 1.0]), (0, 1)), item.item_id
        )
        for idx, item in enumerate(_items(count, "test", mode, seed=7))
    ]


class _Constant(nn.Module):
    def __init__(self, value):
        super().__init__()
        self.value = nn.Parameter(torch.full((1, 32, 32), value))

    def forward(self, rgb):
        return self.value.expand(len(rgb), 1, 32, 32)


def test_rank_from_losses_counts_ties_as_half():
    assert rank_from_losses(0.2, [0.5, 0.7]) == (1.0, 0)
    assert rank_from_losses(0.5, [0.1, 0.5, 0.9]) == (2.5, 1)
    assert rank_from_losses(0.9, [0.1, 0.2]) == (3.0, 0)


def test_true_image_ranks_first(make_extractor):
    extractor = make_extractor(1)
    truth, *distractors = _items(6, "c", ChannelMode.DEPTH)
    assert rank_identify(truth.stimulus, truth, distractors, extractor) == 1.0


def test_rank_is_invariant_to_distractor_order(make_extractor):
    extractor = make_extractor(1)
    truth, *distractors = _items(8, "c", ChannelMode.DEPTH)
    recon = torch.rand(1, 32, 32)
    forward = rank_identify(recon, truth, distractors, extractor)
    backward = rank_identify(recon, truth, distractors[::-1], extractor)
    assert forward == backward
    assert 1.0 <= forward <= 8.0


def test_duplicate_ids_are_rejected(make_extractor):
    extractor = make_extractor(1)
    truth, other = _items(2, "c", ChannelMode.DEPTH)
    with pytest.raises(DuplicateCandidateError):
        rank_identify(truth.stimulus, truth, [other, other], extractor)


def test_empty_distractors_are_rejected(make_extractor):
    truth = _items(1, "c", ChannelMode.DEPTH)[0]
    with pytest.raises(InsufficientPoolError):
        rank_identify(truth.stimulus, truth, [], make_extractor(1))


def test_rgbd_candidates_are_projected(make_extractor):
    extractor = make_extractor(1)
    truth, *distractors = _items(4, "c")
    assert rank_identify(truth.stimulus.depth, truth, distractors, extractor) == 1.0
    with pytest.raises(ChannelModeError):
        rank_identify(truth.stimulus, truth, distractors, extractor)


def test_bootstrap_constant_ranks():
    assert bootstrap_ci([3.0] * 20, 1000, 0.95, seed=0) == (3.0, 3.0)
    assert bootstrap_ci([7.0]) == (7.0, 7.0)


def test_bootstrap_contains_sample_mean():
    low, high = bootstrap_ci(list(range(1, 101)), 1000, 0.95, seed=0)
    assert low <= 50.5 <= high
    assert high - low > 1.0
    assert bootstrap_ci(list(range(1, 101)), 1000, 0.95, seed=0) == (low, high)


@pytest.mark.parametrize(
    "ranks, iterations, level",
    [([1.0, 2.0], 999, 0.95), ([1.0, 2.0], 1000, 0.0), ([1.0, 2.0], 1000, 1.0), ([], 1000, 0.95)],
)
def test_bootstrap_rejects_invalid_arguments(ranks, iterations, level):
    with pytest.raises(ConsistencyError):
        bootstrap_ci(ranks, iterations, level)


@pytest.mark.slow
def test_bootstrap_interval_coverage():
    rng = np.random.default_rng(20)
    true_mean = 5.5
    covered = 0
    for study in range(1000):
        ranks = rng.integers(1, 11, size=200).astype(float)
        low, high = bootstrap_ci(ranks, 1000, 0.95, seed=study)
        covered += low <= true_mean <= high
    assert 0.93 <= covered / 1000 <= 0.97


def test_passthrough_reconstructions_rank_first(make_extractor):
    extractor = make_extractor(4)
    test = _test_set(4)
    pool = _items(9, "pool", seed=1)
    reconstructions = {e.item_id: e.stimulus.raster for e in test}
    results = evaluate_reconstructions(reconstructions, test, pool, extractor, [2, 5, 10])
    assert sorted(results) == [2, 5, 10]
    for n, result in results.items():
        assert result.mean == 1.0
        assert result.ci == (1.0, 1.0)
        assert result.metric_mode == "rgbd"
        assert result.chance == (n + 1) / 2


def test_pool_must_cover_largest_n(make_extractor):
    test = _test_set(2)
    with pytest.raises(InsufficientPoolError) as err:
        evaluate_reconstructions(
            {e.item_id: e.stimulus.raster for e in test},
            test,
            _items(3, "pool"),
            make_extractor(4),
            [5],
        )
    assert err.value.required == 4


def test_pool_may_not_hold_test_items(make_extractor):
    test = _test_set(2)
    pool = [UnpairedExample(test[0].stimulus, test[0].item_id)] + _items(4, "pool")
    with pytest.raises(DuplicateCandidateError):
        evaluate_reconstructions(
            {e.item_id: e.stimulus.raster for e in test}, test, pool, make_extractor(4), [2]
        )


def test_smaller_n_use_a_prefix_of_the_draw(make_extractor):
    extractor = make_extractor(1)
    test = _test_set(3, ChannelMode.DEPTH)
    pool = _items(12, "pool", ChannelMode.DEPTH, seed=2)
    recon = {e.item_id: torch.rand(1, 32, 32) for e in test}
    both = evaluate_reconstructions(recon, test, pool, extractor, [3, 10], seed=4)
    small = evaluate_reconstructions(recon, test, pool, extractor, [3], seed=4)
    assert both[3].ranks == small[3].ranks
    for a, b in zip(both[3].ranks, both[10].ranks):
        assert a <= b


def test_evaluate_testset_decodes_in_extractor_mode(make_extractor):
    torch.manual_seed(0)
    decoder = Decoder((0, 1), ChannelMode.RGBD, (32, 32), width=8)
    test = _test_set(3)
    pool = _items(6, "pool", seed=3)
    config = EvaluationConfig(n_list=[2, 4], bootstrap_iterations=1000)
    depth = evaluate_testset(decoder, test, pool, make_extractor(1), config.n_list, config)
    rgb = evaluate_testset(decoder, test, pool, make_extractor(3), config.n_list, config)
    assert depth[4].metric_mode == "depth"
    assert rgb[4].metric_mode == "rgb"
    for result in list(depth.values()) + list(rgb.values()):
        assert all(1.0 <= r <= result.n for r in result.ranks)
        assert result.ci[0] <= result.mean <= result.ci[1]


def test_constant_estimator_gives_indirect_ranks_at_chance(make_extractor):
    decoder = Decoder((0, 1), ChannelMode.RGB, (32, 32), width=8)
    test = _test_set(40)
    pool = _items(40, "pool", seed=5)
    results = indirect_depth_eval(decoder, _Constant(0.5), test, pool, make_extractor(1), [5])
    assert np.mean(results[5].ranks) == pytest.approx(3.0, rel=0.35)


def test_indirect_eval_needs_rgb_decoder(make_extractor):
    decoder = Decoder((0, 1), ChannelMode.RGBD, (32, 32), width=8)
    with pytest.raises(ChannelModeError):
        indirect_depth_eval(decoder, DepthEstimator(width=4), _test_set(1), [], make_extractor(1))


def test_report_round_trip(tmp_path):
    result = RankResult(
        n=5,
        item_ids=("a", "b"),
        ranks=(1.0, 2.5),
        ties=(0, 1),
        mean=1.75,
        ci=(1.0, 2.5),
        metric_mode="depth",
        seed=0,
    )
    path = write_report(tmp_path / "report.json", {"depth": {5: result}}, method="rgbd", seed=0)
    results, metadata = read_report(path)
    assert results["depth"][5] == result
    assert metadata["method"] == "rgbd"
    (row,) = summary_table(results)
    assert row["chance"] == 3.0 and row["items"] == 2


@pytest.mark.slow
def test_constant_reconstruction_ranks_at_chance(make_extractor):
    extractor = make_extractor(1)
    test = _test_set(400, ChannelMode.DEPTH)
    pool = _items(2000, "pool", ChannelMode.DEPTH, seed=11)
    constant = torch.full((1, 32, 32), 0.5)
    reconstructions = {e.item_id: constant for e in test}
    results = evaluate_reconstructions(reconstructions, test, pool, extractor, [50])
    assert results[50].mean == pytest.approx(25.5, rel=0.1)
