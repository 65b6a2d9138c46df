"""Render figures as PNG with a JSON sidecar holding the plotted data."""
import json
import logging
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  pylint: disable=wrong-import-position
import numpy as np  # noqa: E402
from scipy import stats  # noqa: E402

from .analysis import Agreement, VdsiReport, vdsi_agreement  # noqa: E402
from .errors import ConsistencyError  # noqa: E402
from .evaluation import RankResult  # noqa: E402
from .fileio import PathLike  # noqa: E402

_LOGGER = logging.getLogger(__name__)


def sidecar_path(png: PathLike) -> Path:
    """Return the JSON sidecar path of figure `png`."""
    return Path(png).with_suffix(".json")


def _save(fig, png: PathLike, data: Dict) -> Path:
    png = Path(png)
    png.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(png, dpi=120, bbox_inches="tight")
    plt.close(fig)
    sidecar_path(png).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _LOGGER.info("Wrote figure %s", png)
    return png


def plot_ranks(
    results: Mapping[str, Mapping[int, RankResult]], png: PathLike, title: str = ""
) -> Path:
    """Draw mean rank per n as grouped bars with CI whiskers and chance markers."""
    metrics = sorted(results)
    n_values = sorted({n for by_n in results.values() for n in by_n})
    if not n_values:
        raise ConsistencyError("No rank results to plot")
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(n_values)), 4.5))
    width = 0.8 / max(1, len(metrics))
    positions = np.arange(len(n_values))
    data = {"title": title, "n": n_values, "series": {}}
    for offset, metric in enumerate(metrics):
        by_n = results[metric]
        means = [by_n[n].mean if n in by_n else np.nan for n in n_values]
        lows = [by_n[n].mean - by_n[n].ci[0] if n in by_n else 0.0 for n in n_values]
        highs = [by_n[n].ci[1] - by_n[n].mean if n in by_n else 0.0 for n in n_values]
        ax.bar(
            positions + offset * width,
            means,
            width,
            yerr=[lows, highs],
            capsize=3,
            label=metric,
        )
        data["series"][metric] = {
            "mean": [None if np.isnan(m) else m for m in means],
            "ci": [list(by_n[n].ci) if n in by_n else None for n in n_values],
        }
    chance = [(n + 1) / 2.0 for n in n_values]
    ax.scatter(positions + 0.4 - width / 2, chance, marker="_", color="k", s=200, label="chance")
    ax.set_xticks(positions + 0.4 - width / 2)
    ax.set_xticklabels([str(n) for n in n_values])
    ax.set_yscale("log")
    ax.set_xlabel("n-way")
    ax.set_ylabel("mean rank (lower is better)")
    ax.set_title(title)
    ax.legend()
    data["chance"] = chance
    return _save(fig, png, data)


def plot_vdsi_scatter(
    report_a: VdsiReport,
    report_b: VdsiReport,
    png: PathLike,
    labels: Tuple[str, str] = ("dataset A", "dataset B"),
) -> Agreement:
    """Draw a density-colored scatter of two VDSI reports and return their agreement."""
    agreement = vdsi_agreement(report_a, report_b)
    b_values = report_b.values_for(report_a.voxel_ids)
    keep = ~report_a.sentinel & ~report_b.sentinel[
        [report_b.voxel_ids.index(v) for v in report_a.voxel_ids]
    ]
    x, y = report_a.vdsi[keep], b_values[keep]
    try:
        density = stats.gaussian_kde(np.vstack([x, y]))(np.vstack([x, y]))
    except (np.linalg.LinAlgError, ValueError):
        density = np.ones_like(x)
    order = np.argsort(density)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(x[order], y[order], c=density[order], s=8, cmap="viridis")
    limit = float(max(x.max(), y.max())) if len(x) else 1.0
    ax.plot([0, limit], [0, limit], color="grey", linewidth=0.8)
    ax.set_xlabel(f"VDSI ({labels[0]})")
    ax.set_ylabel(f"VDSI ({labels[1]})")
    ax.set_title(f"Pearson r = {agreement.correlation:.3f} ({agreement.voxels} voxels)")
    _save(
        fig,
        png,
        {
            "labels": list(labels),
            "voxel_ids": [v for v, k in zip(report_a.voxel_ids, keep) if k],
            "x": x.tolist(),
            "y": y.tolist(),
            "correlation": agreement.correlation,
            "voxels": agreement.voxels,
            "excluded": agreement.excluded,
        },
    )
    return agreement


def plot_tradeoff(
    methods: Mapping[str, Mapping[str, Mapping[int, RankResult]]],
    png: PathLike,
    n: int,
    depth_metric: str = "depth",
    rgb_metric: str = "rgb",
) -> Optional[Path]:
    """Draw mean depth rank against mean RGB rank, one point per method."""
    points = {}
    for label, results in methods.items():
        depth = results.get(depth_metric, {}).get(n)
        rgb = results.get(rgb_metric, {}).get(n)
        if depth is None or rgb is None:
            _LOGGER.warning("Skipping %s: no %s-way depth and RGB ranks", label, n)
            continue
        points[label] = (depth, rgb)
    if not points:
        raise ConsistencyError(f"No report holds both depth and RGB ranks at n={n}")
    fig, ax = plt.subplots(figsize=(5.5, 5))
    data = {"n": n, "methods": {}}
    for label, (depth, rgb) in sorted(points.items()):
        ax.errorbar(
            rgb.mean,
            depth.mean,
            xerr=[[rgb.mean - rgb.ci[0]], [rgb.ci[1] - rgb.mean]],
            yerr=[[depth.mean - depth.ci[0]], [depth.ci[1] - depth.mean]],
            fmt="o",
            capsize=3,
            label=label,
        )
        data["methods"][label] = {
            "depth_mean": depth.mean,
            "depth_ci": list(depth.ci),
            "rgb_mean": rgb.mean,
            "rgb_ci": list(rgb.ci),
        }
    chance = (n + 1) / 2.0
    ax.axhline(chance, color="grey", linestyle=":", linewidth=0.8)
    ax.axvline(chance, color="grey", linestyle=":", linewidth=0.8)
    ax.set_xlabel(f"mean {n}-way RGB rank")
    ax.set_ylabel(f"mean {n}-way depth rank")
    ax.legend()
    data["chance"] = chance
    return _save(fig, png, data)
