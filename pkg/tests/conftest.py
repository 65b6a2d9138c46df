"""Shared fixtures: small rasters, reduced networks and a tiny benchmark."""
import pytest
import torch

from depthdecode.benchmark import build_benchmark
from depthdecode.config import Config
from depthdecode.perceptual import FeatureExtractor

RESOLUTION = (32, 32)
SMALL_WIDTHS = (4, 4, 8, 8, 8)


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run slow training tests"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def small_config(tmp_path):
    """Return a configuration sized for seconds-long CPU runs."""
    config = Config.model_validate(
        {
            "data": {"root": str(tmp_path / "bench"), "resolution": list(RESOLUTION)},
            "features": {
                "widths": list(SMALL_WIDTHS),
                "samples": 16,
                "epochs": 1,
                "batch_size": 8,
            },
            "depth_estimator": {"scenes": 8, "validation_scenes": 4, "width": 4, "epochs": 1},
            "model": {"pool_size": 2, "decoder_width": 8},
            "training": {
                "paired_batch_size": 4,
                "unpaired_batch_size": 4,
                "encoder_epochs": 2,
                "decoder_epochs": 2,
                "validation_fraction": 0.25,
            },
            "evaluation": {"n_list": [2, 5], "bootstrap_iterations": 1000},
            "benchmark": {
                "paired_train": 8,
                "paired_test": 2,
                "unpaired": 20,
                "voxels": 24,
                "depth_voxels": 2,
                "color_voxels": 2,
                "grid": 4,
                "calibration_scenes": 16,
                "receptive_field": 1.0,
            },
            "paths": {
                "runs": str(tmp_path / "runs"),
                "features": str(tmp_path / "runs/pretrain-features-{mode}/extractor"),
                "depth_estimator": str(tmp_path / "runs/train-depth-est/estimator"),
                "encoder": str(tmp_path / "runs/train-enc-{mode}/encoder"),
                "decoder": str(tmp_path / "runs/train-dec-{mode}/decoder"),
                "constrained_decoder": str(
                    tmp_path / "runs/train-dec-rgb-constrained-{loss}/decoder"
                ),
            },
        }
    )
    return config


@pytest.fixture
def make_extractor():
    """Return a factory of seeded reduced extractors."""

    def factory(channels, seed=0, **kwargs):
        torch.manual_seed(seed)
        extractor = FeatureExtractor(channels, kwargs.pop("widths", SMALL_WIDTHS), **kwargs)
        return extractor.eval()

    return factory


@pytest.fixture
def benchmark_root(small_config):
    """Return the root of a freshly built tiny benchmark."""
    root = small_config.data.root
    build_benchmark(small_config, root)
    return root
