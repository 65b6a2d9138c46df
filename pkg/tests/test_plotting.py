"""Tests for figures and their JSON sidecars."""
import json

import numpy as np
import pytest

from depthdecode.analysis import VdsiReport
from depthdecode.errors import ConsistencyError
from depthdecode.evaluation import RankResult
from depthdecode.plotting import plot_ranks, plot_tradeoff, plot_vdsi_scatter, sidecar_path


def _result(n, mean, metric):
    return RankResult(
        n=n,
        item_ids=("a", "b"),
        ranks=(mean, mean),
        ties=(0, 0),
        mean=mean,
        ci=(mean - 0.5, mean + 0.5),
        metric_mode=metric,
        seed=0,
    )


def _report(values, sentinel):
    return VdsiReport(
        voxel_ids=tuple(range(len(values))),
        vdsi=np.asarray(values, dtype=np.float64),
        regions=("V1",) * len(values),
        sentinel=np.asarray(sentinel),
        depth_change=np.ones(len(values)),
        color_change=np.ones(len(values)),
        samples=1,
    )


def test_rank_plot_writes_png_and_sidecar(tmp_path):
    results = {
        "depth": {5: _result(5, 1.5, "depth"), 10: _result(10, 2.0, "depth")},
        "rgb": {5: _result(5, 2.5, "rgb")},
    }
    png = plot_ranks(results, tmp_path / "figures" / "ranks.png", title="rgbd")
    assert png.is_file() and png.stat().st_size > 0
    data = json.loads(sidecar_path(png).read_text())
    assert data["n"] == [5, 10]
    assert data["chance"] == [3.0, 5.5]
    assert data["series"]["rgb"]["mean"] == [2.5, None]
    assert data["series"]["depth"]["ci"][1] == [1.5, 2.5]


def test_rank_plot_needs_results(tmp_path):
    with pytest.raises(ConsistencyError):
        plot_ranks({}, tmp_path / "ranks.png")


def test_tradeoff_skips_incomplete_methods(tmp_path):
    methods = {
        "rgbd": {"depth": {5: _result(5, 1.5, "depth")}, "rgb": {5: _result(5, 2.0, "rgb")}},
        "rgb": {"rgb": {5: _result(5, 1.8, "rgb")}},
    }
    png = plot_tradeoff(methods, tmp_path / "tradeoff.png", n=5)
    data = json.loads(sidecar_path(png).read_text())
    assert sorted(data["methods"]) == ["rgbd"]
    assert data["methods"]["rgbd"]["depth_mean"] == 1.5
    assert data["chance"] == 3.0
    with pytest.raises(ConsistencyError):
        plot_tradeoff(methods, tmp_path / "none.png", n=10)


def test_vdsi_scatter_reports_agreement(tmp_path):
    a = _report([0.2, 0.5, 1.0, 2.0, 1e6], [False, False, False, False, True])
    b = _report([0.3, 0.6, 1.2, 2.4, 0.1], [False] * 5)
    agreement = plot_vdsi_scatter(a, b, tmp_path / "scatter.png", labels=("synthetic", "nyu"))
    assert agreement.voxels == 4
    assert agreement.correlation == pytest.approx(1.0, abs=0.01)
    data = json.loads(sidecar_path(tmp_path / "scatter.png").read_text())
    assert data["voxel_ids"] == [0, 1, 2, 3]
    assert data["labels"] == ["synthetic", "nyu"]
    assert data["excluded"] == 1
