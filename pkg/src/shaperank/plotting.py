"""SVG figures for retrieval reports: precision-recall curves and confusion
heatmaps. Output carries no timestamps, so reruns give identical files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "shaperank", "svg.fonttype": "none"}
_META = {"Date": None, "Creator": None}


def _save(fig, path) -> None:
    with matplotlib.rc_context(_RC):
        fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def plot_pr_curves(curves: dict, path, title: str = "") -> None:
    """One polyline per method; ``curves`` maps label -> (recall, precision)."""
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 4))
        for label, (r, p) in curves.items():
            ax.plot(r, p, marker="o", markersize=2.5, linewidth=1.2, label=label)
        ax.set_xlabel("Recall")
        ax.set_ylabel("Precision")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.grid(True, linewidth=0.3)
        if title:
            ax.set_title(title)
        ax.legend(loc="lower left", fontsize=8)
        fig.tight_layout()
    _save(fig, path)


def plot_confusion(classes, matrix, path, title: str = "") -> None:
    m = np.asarray(matrix, dtype=float)
    with matplotlib.rc_context(_RC):
        size = max(3.5, 0.35 * len(classes) + 1.5)
        fig, ax = plt.subplots(figsize=(size, size))
        im = ax.imshow(m, cmap="viridis", vmin=0.0, vmax=1.0)
        ax.set_xticks(range(len(classes)))
        ax.set_yticks(range(len(classes)))
        ax.set_xticklabels(classes, rotation=90, fontsize=7)
        ax.set_yticklabels(classes, fontsize=7)
        ax.set_xlabel("Nearest neighbour class")
        ax.set_ylabel("Query class")
        if title:
            ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        fig.tight_layout()
    _save(fig, path)
