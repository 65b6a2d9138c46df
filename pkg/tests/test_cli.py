"""Tests for the command line."""
import json

import pytest
import yaml

from depthdecode.checkpoint import save_checkpoint
from depthdecode.cli import dispatch
from depthdecode.config import dump_config
from depthdecode.const import SEED_ENV
from depthdecode.dataset import load_dataset, save_dataset
from depthdecode.encdec import Decoder
from depthdecode.run import read_run_manifest
from depthdecode.sample import ChannelMode


@pytest.fixture
def config_file(small_config, tmp_path, monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    path = tmp_path / "config.yaml"
    path.write_text(dump_config(small_config), encoding="utf-8")
    return str(path)


def _error(stderr):
    return json.loads([line for line in stderr.splitlines() if line.strip()][-1])


def test_help_and_usage(capsys):
    assert dispatch(["--help"]) == 0
    assert dispatch([]) == 2
    assert dispatch(["no-such-command"]) == 2
    assert dispatch(["gen-scenes"]) == 2


def test_print_config(config_file, capsys):
    assert dispatch(["--config", config_file, "--print-config"]) == 0
    printed = yaml.safe_load(capsys.readouterr().out)
    assert printed["data"]["resolution"] == [32, 32]
    assert printed["model"]["channel_mode"] == "rgbd"


def test_invalid_config_file(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    path = tmp_path / "bad.yaml"
    path.write_text("model:\n  alpha: 3\n", encoding="utf-8")
    assert dispatch(["--config", str(path), "--print-config"]) == 1
    assert _error(capsys.readouterr().err)["error"] == "ConfigError"


def test_eval_without_decoder_fails(config_file, tmp_path, capsys):
    missing = tmp_path / "missing"
    code = dispatch(["--config", config_file, "eval", "--decoder", str(missing)])
    assert code == 1
    error = _error(capsys.readouterr().err)
    assert error["error"] == "CheckpointError"
    assert str(missing) + ".pt" in error["message"]
    assert not (tmp_path / "runs" / "eval-rgbd").exists()


def test_gen_scenes(config_file, tmp_path, capsys):
    out, run_dir = tmp_path / "scenes", tmp_path / "run"
    argv = ["--config", config_file, "gen-scenes", "--count", "3", "--out", str(out)]
    assert dispatch(argv + ["--run-dir", str(run_dir)]) == 0
    assert len(list((out / "images").glob("*.png"))) == 3
    assert len(list((out / "depth").glob("*.ddr"))) == 3
    assert read_run_manifest(run_dir).status == "complete"

    assert dispatch(argv + ["--run-dir", str(run_dir)]) == 1
    assert _error(capsys.readouterr().err)["error"] == "OutputExistsError"
    assert dispatch(argv + ["--run-dir", str(run_dir), "--resume"]) == 0
    assert dispatch(argv + ["--run-dir", str(run_dir), "--force"]) == 0


def test_gen_benchmark(config_file, tmp_path, capsys):
    out = tmp_path / "bench-cli"
    code = dispatch(
        ["--config", config_file, "gen-benchmark", "--out", str(out), "--run-dir", str(tmp_path / "r")]
    )
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["benchmark"] == str(out)
    assert (out / "benchmark.json").is_file()
    manifest = read_run_manifest(tmp_path / "r")
    assert manifest.outputs == [str(out)]
    assert manifest.command == "gen-benchmark"


def test_gen_benchmark_declares_default_root(config_file, small_config, tmp_path, capsys):
    run_dir = tmp_path / "r"
    assert dispatch(["--config", config_file, "gen-benchmark", "--run-dir", str(run_dir)]) == 0
    root = small_config.data.root
    assert json.loads(capsys.readouterr().out)["benchmark"] == root
    manifest = read_run_manifest(run_dir)
    assert manifest.output_roots == [root]
    assert manifest.outputs == [root]


def test_depth_eval_reads_depth_only_data(
    benchmark_root, small_config, make_extractor, tmp_path, monkeypatch, capsys
):
    monkeypatch.delenv(SEED_ENV, raising=False)
    depth_root = tmp_path / "depth-only"
    splits = load_dataset(benchmark_root, ChannelMode.RGBD).as_mode(ChannelMode.DEPTH)
    save_dataset(depth_root, splits)
    small_config.data.root = str(depth_root)
    path = tmp_path / "depth.yaml"
    path.write_text(dump_config(small_config), encoding="utf-8")

    decoder = tmp_path / "decoder"
    save_checkpoint(decoder, Decoder(splits.voxel_ids, ChannelMode.DEPTH, (32, 32), width=8))
    save_checkpoint(small_config.paths.resolve("features", mode="d"), make_extractor(1))
    out = tmp_path / "report.json"
    argv = ["--config", str(path), "eval", "--mode", "d", "--decoder", str(decoder)]
    assert dispatch(argv + ["--out", str(out)]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert {row["metric_mode"] for row in rows} == {"depth"}
    assert out.is_file()
