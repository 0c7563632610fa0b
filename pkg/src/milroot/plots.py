"""Matplotlib figure rendering for the report path.

Every CSV the pipeline writes gets a figure next to it: per-run ROC
overlays, a cross-algorithm mean-ROC comparison, and the signature
spread plot for repeated MI-ACE trainings.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import RocCurve
from .features import FEATURE_NAMES


def plot_roc_runs(curves: list[RocCurve], title: str, path) -> None:
    """Overlay the ROC curves of repeated runs of one algorithm."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for i, curve in enumerate(curves):
        ax.plot(curve.fpr, curve.tpr, lw=0.8, alpha=0.7,
                label=f"run {i} (AUC {curve.auc:.3f})" if len(curves) <= 6 else None)
    ax.plot([0, 1], [0, 1], "k:", lw=0.5)
    ax.set_xlabel("FPR")
    ax.set_ylabel("TPR")
    ax.set_title(title)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    if len(curves) <= 6:
        ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _mean_curve(curves: list[RocCurve], grid: np.ndarray) -> np.ndarray:
    stacked = []
    for c in curves:
        # step interpolation matching tpr_at_fpr
        idx = np.searchsorted(c.fpr, grid, side="right") - 1
        stacked.append(c.tpr[np.maximum(idx, 0)])
    return np.mean(stacked, axis=0)


def plot_roc_comparison(curves_by_algorithm: dict[str, list[RocCurve]], path) -> None:
    """Mean ROC per algorithm on a common FPR grid."""
    grid = np.linspace(0, 1, 201)
    fig, ax = plt.subplots(figsize=(5, 4))
    for algo in sorted(curves_by_algorithm):
        ax.plot(grid, _mean_curve(curves_by_algorithm[algo], grid), lw=1.2,
                label=algo)
    ax.plot([0, 1], [0, 1], "k:", lw=0.5)
    ax.set_xlabel("FPR")
    ax.set_ylabel("mean TPR")
    ax.set_title("mean ROC across runs")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_signatures(signatures: np.ndarray, path) -> None:
    """Scatter of per-band signature values across runs (rows = runs)."""
    sig = np.atleast_2d(np.asarray(signatures))
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(sig.shape[1])
    for row in sig:
        ax.plot(x, row, "o", ms=3, alpha=0.6, color="tab:blue")
    ax.plot(x, sig.mean(axis=0), "_", ms=14, color="tab:red", label="mean")
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xticks(x)
    ax.set_xticklabels(FEATURE_NAMES, rotation=60, fontsize=7, ha="right")
    ax.set_ylabel("signature value")
    ax.set_title(f"target signatures across {sig.shape[0]} runs")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
