"""Report figures: training/validation loss curves and per-regime metric bars."""

from __future__ import annotations

from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 150,
    "savefig.bbox": "tight",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "axes.grid": True,
    "grid.linestyle": ":",
    "grid.alpha": 0.6,
    "legend.fontsize": 7,
    "legend.frameon": False,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "lines.linewidth": 1.2,
}


def _get(row, key):
    return row[key] if isinstance(row, dict) else getattr(row, key)


def plot_training_curves(rows, path) -> None:
    """Train (solid) and validation (dashed) loss per epoch for every run with a history."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for i, row in enumerate(r for r in rows if getattr(r, "history", None)):
            hist = np.asarray(row.history)
            epochs = np.arange(1, len(hist) + 1)
            color = f"C{i % 10}"
            ax.plot(epochs, hist[:, 0], color=color, label=f"{row.run_id} train")
            ax.plot(epochs, hist[:, 1], color=color, linestyle="--", label=f"{row.run_id} val")
        ax.set_xlabel("epoch")
        ax.set_ylabel("data loss")
        if ax.lines:
            ax.legend(ncol=2)
        fig.savefig(path)
        plt.close(fig)


def plot_metric_bars(rows, path, metrics=("top1", "top2", "macro_f1")) -> None:
    """Median of each metric per (transfer regime, loss regime) group, with min/max whiskers."""
    groups = defaultdict(list)
    for row in rows:
        groups[f"{_get(row, 'transfer_regime')}/{_get(row, 'loss_regime')}"].append(row)
    labels = sorted(groups)
    x = np.arange(len(labels))
    width = 0.8 / len(metrics)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for j, metric in enumerate(metrics):
            values = [np.array([_get(r, metric) for r in groups[g]], dtype=float) for g in labels]
            pos = x + (j - (len(metrics) - 1) / 2) * width
            ax.bar(pos, [np.median(v) for v in values], width, label=metric)
            ax.vlines(pos, [v.min() for v in values], [v.max() for v in values], colors="0.2", linewidth=0.8)
        ax.set_xticks(x, labels, rotation=20, ha="right")
        ax.set_ylim(0, 1)
        ax.set_ylabel("score")
        ax.legend(ncol=len(metrics))
        fig.savefig(path)
        plt.close(fig)
