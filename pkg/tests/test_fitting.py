"""Tests for training plumbing and checkpoints."""
import json
import math

import pytest
import torch

from depthdecode.checkpoint import (
    architecture_hash,
    checkpoint_paths,
    load_checkpoint,
    read_manifest,
    save_checkpoint,
)
from depthdecode.depth import DepthEstimator
from depthdecode.errors import CheckpointError, LossBoundsError, TrainingDivergedError
from depthdecode.fitting import (
    EarlyStopping,
    ProgressLog,
    ensure_bounds,
    ensure_finite,
    state_checksum,
)


def test_non_finite_loss_carries_diagnostics():
    with pytest.raises(TrainingDivergedError) as err:
        ensure_finite({"dec": 0.4, "cyc": math.nan}, step=12, last_good={"dec": 0.5, "cyc": 0.3})
    assert err.value.diagnostics["step"] == 12
    assert err.value.diagnostics["non_finite"] == ["cyc"]
    assert err.value.diagnostics["last_good"] == {"dec": 0.5, "cyc": 0.3}
    ensure_finite({"dec": 0.4}, step=1)


def test_loss_bounds():
    ensure_bounds({"cosine": -1.0, "extra": 9.0}, {"cosine": (-1.0, 1.0)})
    with pytest.raises(LossBoundsError):
        ensure_bounds({"l1": 1.2}, {"l1": (0.0, 1.0)})


def test_early_stopping_restores_best_state():
    model = torch.nn.Linear(2, 1)
    stopper = EarlyStopping(patience=2)
    assert not stopper.update(1.0, 0, model)
    best = state_checksum(model)
    with torch.no_grad():
        model.weight.add_(1.0)
    assert not stopper.update(1.5, 1, model)
    assert stopper.update(1.2, 2, model)
    assert stopper.best_epoch == 0
    stopper.restore(model)
    assert state_checksum(model) == best


def test_progress_log_writes_json_lines(tmp_path):
    log = ProgressLog(tmp_path / "progress.jsonl")
    log.record("encoder", epoch=0, step=1, loss=torch.tensor(0.25))
    log.record("encoder", epoch=0, step=2, loss=0.2)
    lines = (tmp_path / "progress.jsonl").read_text().splitlines()
    assert [json.loads(line)["step"] for line in lines] == [1, 2]
    assert log.records[0]["loss"] == 0.25


def test_checkpoint_round_trip(tmp_path, make_extractor):
    extractor = make_extractor(4)
    save_checkpoint(tmp_path / "extractor", extractor, step=3, mode="rgbd")
    loaded, manifest = load_checkpoint(tmp_path / "extractor")
    assert manifest["step"] == 3 and manifest["mode"] == "rgbd"
    assert state_checksum(loaded) == state_checksum(extractor)
    assert architecture_hash(loaded) == manifest["architecture_hash"]
    assert not loaded.training


def test_missing_checkpoint(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent")


def test_missing_weights(tmp_path):
    save_checkpoint(tmp_path / "estimator", DepthEstimator(width=4))
    checkpoint_paths(tmp_path / "estimator")[0].unlink()
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "estimator")


def test_architecture_mismatch(tmp_path):
    manifest = save_checkpoint(tmp_path / "estimator", DepthEstimator(width=4))
    lines = [
        'architecture_hash="0000"' if line.startswith("architecture_hash=") else line
        for line in manifest.read_text().splitlines()
    ]
    manifest.write_text("\n".join(lines) + "\n")
    assert read_manifest(tmp_path / "estimator")["architecture_hash"] == "0000"
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "estimator")


def test_malformed_manifest(tmp_path):
    manifest = save_checkpoint(tmp_path / "estimator", DepthEstimator(width=4))
    manifest.write_text("model DepthEstimator\n")
    with pytest.raises(CheckpointError):
        read_manifest(tmp_path / "estimator")
