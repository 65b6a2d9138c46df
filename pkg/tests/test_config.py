"""Tests for the YAML configuration."""
import pytest

from depthdecode.config import Config, dump_config, load_config, parse_config
from depthdecode.const import SEED_ENV
from depthdecode.errors import ConfigError
from depthdecode.sample import ChannelMode


def test_defaults():
    config = load_config(environ={})
    assert config.model.channel_mode is ChannelMode.RGBD
    assert config.model.alpha == 0.9
    assert config.model.tv_weight == 0.1
    assert config.evaluation.n_list == [5, 10, 50, 100, 500, 1000]
    assert config.data.resolution == (112, 112)
    assert config.analysis.fill == "zero"


def test_dump_and_parse_agree(small_config):
    assert parse_config(dump_config(small_config), environ={}) == small_config


def test_sections_may_be_partial():
    config = parse_config("model:\n  channel_mode: d\ntraining:\n  seed: 4\n", environ={})
    assert config.model.channel_mode is ChannelMode.DEPTH
    assert config.training.seed == 4
    assert config.training.encoder_epochs == Config().training.encoder_epochs


def test_seed_override_reaches_every_seed():
    config = parse_config("", environ={SEED_ENV: "7"})
    assert config.seeds == {
        "features": 7,
        "depth_estimator": 7,
        "training": 7,
        "evaluation": 7,
        "scene": 7,
        "brain": 8,
        "noise": 9,
    }
    with pytest.raises(ConfigError):
        parse_config("", environ={SEED_ENV: "seven"})


def test_n_list_is_sorted_and_unique():
    config = parse_config("evaluation:\n  n_list: [10, 2, 10]\n", environ={})
    assert config.evaluation.n_list == [2, 10]


@pytest.mark.parametrize(
    "text",
    [
        "model: [1, 2",
        "- just\n- a list\n",
        "model:\n  alpha: 1.5\n",
        "model:\n  unknown_key: 1\n",
        "evaluation:\n  n_list: [1, 5]\n",
        "evaluation:\n  bootstrap_iterations: 10\n",
        "data:\n  resolution: [100, 100]\n",
        "analysis:\n  fill: noise\n",
    ],
)
def test_invalid_configuration(text):
    with pytest.raises(ConfigError):
        parse_config(text, environ={})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml", environ={})


def test_load_from_file(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("benchmark:\n  sigma: 0.0\n", encoding="utf-8")
    assert load_config(path, environ={}).benchmark.sigma == 0.0


def test_path_templates(small_config):
    path = small_config.paths.resolve("encoder", mode="rgbd")
    assert path.name == "encoder"
    assert path.parent.name == "train-enc-rgbd"
