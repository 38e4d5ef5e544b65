"""Figure rendering for the report commands.

Both report paths (`stats` and `evaluate`) write PNG figures next to
their delimited output when an output directory is given.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bench import TableRow, get_protocol, round2
from .errors import ValidationError
from .pipeline import StatsReport


def render_eval_figure(rows: list[TableRow], path) -> Path:
    """Grouped bars of per-dimension means per group, annotated with Overall."""
    if not rows:
        raise ValidationError("no rows to plot")
    protocol = get_protocol(rows[0].protocol)
    ordered = sorted(rows, key=lambda r: r.overall)
    labels = [" / ".join(str(v) for v in r.keys.values()) for r in ordered]
    dims = protocol.dimensions
    x = np.arange(len(ordered))
    width = 0.8 / len(dims)

    fig, ax = plt.subplots(figsize=(max(6.0, 1.8 * len(ordered)), 4.2))
    for i, dim in enumerate(dims):
        values = [r.dim_means[dim] for r in ordered]
        ax.bar(x + (i - (len(dims) - 1) / 2) * width, values, width, label=dim)
    for xi, row in zip(x, ordered):
        ax.annotate(
            f"{round2(row.overall):.2f}",
            (xi, max(row.dim_means.values()) + 0.08),
            ha="center",
            fontsize=9,
        )
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylim(0, 5.5)
    ax.set_ylabel("mean score (1-5)")
    ax.set_title(f"{protocol.name} dimension means (Overall annotated)")
    ax.legend(fontsize=8, ncol=2)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_stats_figure(report: StatsReport, path) -> Path:
    """Two panels: accepted videos per theme, and rejections per stage."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))

    themes = list(report.per_theme)
    videos = [report.per_theme[t]["videos"] for t in themes]
    ax1.bar(themes, videos, color="#4878a8")
    for i, v in enumerate(videos):
        ax1.annotate(str(v), (i, v), ha="center", va="bottom", fontsize=9)
    ax1.set_title(f"accepted videos per theme (total {report.accepted})")
    ax1.set_ylabel("videos")
    ax1.tick_params(axis="x", rotation=15)

    stages = [str(s) for s in range(1, 6)]
    rejections = [report.rejections_per_stage.get(s, 0) for s in stages]
    failures = [report.failures_per_stage.get(s, 0) for s in stages]
    ax2.bar(stages, rejections, label="rejected", color="#b0504e")
    ax2.bar(stages, failures, bottom=rejections, label="failed", color="#777777")
    ax2.set_title("drop-outs per stage")
    ax2.set_xlabel("stage")
    ax2.legend(fontsize=8)

    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
