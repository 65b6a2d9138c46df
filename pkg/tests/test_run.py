"""Tests for run directories."""
import json
import logging

import pytest

from depthdecode.errors import OutputExistsError, ResumeMismatchError
from depthdecode.run import RunDirectory, path_checksum, read_run_manifest


@pytest.fixture
def source(tmp_path):
    path = tmp_path / "input.txt"
    path.write_text("first", encoding="utf-8")
    return path


def _run(root, config, source, **kwargs):
    with RunDirectory(root, "train-enc", config, inputs=[source], **kwargs) as run:
        if not run.skip:
            logging.getLogger("depthdecode.test").warning("working")
            run.progress.record("encoder", epoch=0, step=1, loss=0.5)
            run.output(run.path("encoder.pt")).write_text("weights")
    return run


def test_completed_run_leaves_manifest(tmp_path, small_config, source):
    root = tmp_path / "run"
    _run(root, small_config, source, argv=["train-enc"])
    manifest = read_run_manifest(root)
    assert manifest.status == "complete"
    assert manifest.command == "train-enc"
    assert manifest.argv == ["train-enc"]
    assert manifest.seeds == small_config.seeds
    assert manifest.inputs == {str(source): path_checksum(source)}
    assert manifest.outputs == [str(root / "encoder.pt")]
    assert manifest.output_roots == []
    assert manifest.parsed_config() == small_config
    assert "working" in (root / "run.log").read_text()
    (record,) = [json.loads(line) for line in (root / "progress.jsonl").read_text().splitlines()]
    assert record["loss"] == 0.5


def test_failed_run_records_error(tmp_path, small_config):
    root = tmp_path / "run"
    with pytest.raises(RuntimeError):
        with RunDirectory(root, "eval", small_config):
            raise RuntimeError("boom")
    manifest = read_run_manifest(root)
    assert manifest.status == "failed"
    assert manifest.error == "RuntimeError: boom"


def test_existing_run_needs_resume_or_force(tmp_path, small_config, source):
    root = tmp_path / "run"
    _run(root, small_config, source)
    with pytest.raises(OutputExistsError):
        _run(root, small_config, source)
    run = _run(root, small_config, source, force=True)
    assert not run.skip
    assert read_run_manifest(root).status == "complete"


def test_resume_skips_complete_run(tmp_path, small_config, source):
    root = tmp_path / "run"
    first = _run(root, small_config, source)
    again = _run(root, small_config, source, resume=True)
    assert again.skip
    assert again.manifest.started == first.manifest.started


def test_resume_rejects_changed_input(tmp_path, small_config, source):
    root = tmp_path / "run"
    _run(root, small_config, source)
    source.write_text("second", encoding="utf-8")
    with pytest.raises(ResumeMismatchError) as err:
        _run(root, small_config, source, resume=True)
    assert str(source) in str(err.value)


def test_resume_rejects_changed_config(tmp_path, small_config, source):
    root = tmp_path / "run"
    _run(root, small_config, source)
    with pytest.raises(ResumeMismatchError):
        _run(root, small_config.with_seed(5), source, resume=True)


def test_directory_checksum_covers_contents(tmp_path):
    root = tmp_path / "tree"
    (root / "sub").mkdir(parents=True)
    (root / "sub" / "a.bin").write_bytes(b"abc")
    before = path_checksum(root)
    (root / "sub" / "a.bin").write_bytes(b"abd")
    assert path_checksum(root) != before
