"""Tests for the synthetic scene and simulated-brain benchmark."""
from dataclasses import replace

import numpy as np
import pytest
import torch

from depthdecode.benchmark import (
    build_benchmark,
    calibration_stimuli,
    make_brain,
    read_benchmark_manifest,
    simulate_response,
)
from depthdecode.dataset import load_dataset
from depthdecode.depth import synthetic_rgbd
from depthdecode.errors import ConfigError, OutputExistsError
from depthdecode.sample import ChannelMode


@pytest.fixture
def brain(small_config):
    calibration = synthetic_rgbd(16, seed=0, resolution=(32, 32))
    return make_brain(small_config.benchmark, calibration)


def test_noise_free_responses_are_linear(brain):
    quiet = replace(brain, sigma=0.0)
    a, b = synthetic_rgbd(2, seed=9, resolution=(32, 32))
    combined = simulate_response(quiet, 0.25 * a + 0.5 * b, seed=0).values.double()
    separate = (
        0.25 * simulate_response(quiet, a, seed=0).values.double()
        + 0.5 * simulate_response(quiet, b, seed=0).values.double()
    )
    assert torch.allclose(combined, separate, atol=1e-5)


def test_zero_stimulus_gives_zero_signal(brain):
    quiet = replace(brain, sigma=0.0)
    response = simulate_response(quiet, torch.zeros(4, 32, 32), seed=0)
    assert torch.all(response.values == 0.0)


def test_planted_depth_voxels_ignore_color(brain):
    quiet = replace(brain, sigma=0.0)
    stimulus = synthetic_rgbd(1, seed=4, resolution=(32, 32))[0]
    no_color = stimulus.clone()
    no_color[:3] = 0.0
    full = simulate_response(quiet, stimulus, seed=0).values
    stripped = simulate_response(quiet, no_color, seed=0).values
    planted = list(brain.planted_depth)
    assert len(planted) == 2
    assert torch.allclose(full[planted], stripped[planted], atol=1e-6)


def test_planted_color_voxels_ignore_depth(brain):
    assert np.all(brain.channel[list(brain.planted_color), 3] == 0.0)
    assert not set(brain.planted_color) & set(brain.planted_depth)
    assert not set(brain.mixed) & set(brain.planted_depth)


def test_responses_are_deterministic_given_seed(brain):
    stimulus = synthetic_rgbd(1, seed=2, resolution=(32, 32))[0]
    first = simulate_response(brain, stimulus, seed=[3, 7]).values
    again = simulate_response(brain, stimulus, seed=[3, 7]).values
    other = simulate_response(brain, stimulus, seed=[3, 8]).values
    assert torch.equal(first, again)
    assert not torch.equal(first, other)


def test_calibrated_signal_has_unit_std(brain, small_config):
    calibration = synthetic_rgbd(16, seed=0, resolution=(32, 32))
    std = brain.signal(calibration).std(axis=0)
    informative = brain.scale > 0
    assert np.allclose(std[informative], 1.0)
    assert np.allclose(brain.noise_ceiling[informative], 1.0 / (1.0 + 0.1**2))


def test_too_many_planted_voxels(small_config):
    small_config.benchmark.depth_voxels = 20
    with pytest.raises(ConfigError):
        make_brain(small_config.benchmark, synthetic_rgbd(4, seed=0, resolution=(32, 32)))


def test_benchmark_layout_and_manifest(benchmark_root, small_config):
    splits = load_dataset(benchmark_root, ChannelMode.RGBD)
    assert splits.sizes == (8, 2, 20)
    assert len(splits.voxel_ids) == 24
    assert len(splits.mask.lvc) == 12 and len(splits.mask.hvc) == 12
    manifest = read_benchmark_manifest(benchmark_root)
    assert manifest["counts"] == {"paired_train": 8, "paired_test": 2, "unpaired": 20}
    assert manifest["seeds"] == {"scene": 1, "brain": 2, "noise": 3}
    assert len(manifest["projection_sha256"]) == 64
    assert len(manifest["planted"]["depth"]) == 2
    assert len(manifest["noise_ceiling"]) == 24


def test_benchmark_is_reproducible(benchmark_root, small_config, tmp_path):
    again = tmp_path / "again"
    build_benchmark(small_config, again)
    first = read_benchmark_manifest(benchmark_root)
    second = read_benchmark_manifest(again)
    assert first["projection_sha256"] == second["projection_sha256"]
    a = load_dataset(benchmark_root, ChannelMode.RGBD).paired_test
    b = load_dataset(again, ChannelMode.RGBD).paired_test
    for x, y in zip(a, b):
        assert torch.equal(x.stimulus.raster, y.stimulus.raster)
        assert torch.equal(x.response.values, y.response.values)


def test_benchmark_refuses_non_empty_output(benchmark_root, small_config):
    with pytest.raises(OutputExistsError):
        build_benchmark(small_config, benchmark_root)
    build_benchmark(small_config, benchmark_root, force=True)


def test_single_stimulus_cannot_calibrate(small_config):
    with pytest.raises(ConfigError):
        make_brain(small_config.benchmark, synthetic_rgbd(1, seed=0, resolution=(32, 32)))


def test_one_item_benchmark_has_live_voxels(small_config, tmp_path):
    small_config.benchmark.paired_train = 1
    small_config.benchmark.paired_test = 1
    small_config.benchmark.unpaired = 4
    small_config.benchmark.sigma = 0.0
    brain = make_brain(
        small_config.benchmark, calibration_stimuli(small_config.benchmark, (32, 32))
    )
    assert np.all(brain.scale > 0)

    build_benchmark(small_config, tmp_path / "one")
    splits = load_dataset(tmp_path / "one", ChannelMode.RGBD)
    assert splits.sizes == (1, 1, 4)
    (item,) = splits.paired_train
    assert torch.count_nonzero(item.response.values) == len(splits.voxel_ids)
    expected = simulate_response(brain, item.stimulus, seed=0).values
    assert torch.allclose(item.response.values, expected, atol=1e-5)
