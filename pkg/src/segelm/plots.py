"""Figure rendering for detection summaries and evaluation reports.

Figures are written next to the corresponding JSON/text outputs; the Agg
backend keeps rendering headless and byte-stable for a fixed input.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bccpm import PosteriorSummary
from .evalharness import EvalReport

__all__ = ["plot_posterior", "plot_report", "plot_depth_sweep"]


def plot_posterior(summary: PosteriorSummary, path: str | Path) -> None:
    """Per-time marginal probability with the selected change points."""
    marg = summary.marginal_probability
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(np.arange(1, marg.size + 1), marg, lw=1.0, color="tab:blue")
    for cp in summary.map_mask.change_points[1:]:
        ax.axvline(cp, color="tab:red", ls="--", lw=0.8)
    ax.set_xlabel("time")
    ax.set_ylabel("P(block start)")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title("change-point marginal probability (dashed: selected)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_report(report: EvalReport, path: str | Path, class_names: Sequence[str] | None = None) -> None:
    """Grouped per-fold, per-class accuracy bars with average markers."""
    table = report.fold_class_accuracy
    k, g = table.shape
    names = list(class_names) if class_names else [f"class-{c}" for c in range(g)]
    x = np.arange(k)
    width = 0.8 / g
    fig, ax = plt.subplots(figsize=(7, 3.2))
    for c in range(g):
        ax.bar(x + (c - (g - 1) / 2) * width, table[:, c], width=width, label=names[c])
        ax.axhline(report.class_averages[c], color=f"C{c}", ls=":", lw=0.8)
    ax.set_xticks(x, [f"fold {f + 1}" for f in range(k)])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("per-class accuracy")
    ax.legend(frameon=False, fontsize=8)
    ax.set_title(_config_title(report))
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_depth_sweep(reports: Sequence[EvalReport], path: str | Path) -> None:
    """Mean per-class accuracy as a function of stacked layer count."""
    depths = [int(r.config.get("layers", i + 1)) for i, r in enumerate(reports)]
    g = reports[0].class_averages.size
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    for c in range(g):
        ax.plot(depths, [r.class_averages[c] for r in reports], "o-", label=f"class-{c}")
    ax.plot(depths, [r.mean_accuracy for r in reports], "k--", lw=1.0, label="mean")
    ax.set_xlabel("hidden layers")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.05)
    ax.legend(frameon=False, fontsize=8)
    ax.set_title("accuracy vs stacking depth")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _config_title(report: EvalReport) -> str:
    parts = [f"{key}={report.config[key]}" for key in sorted(report.config)]
    label = ", ".join(parts) if parts else "evaluation"
    return f"{label} (k={report.k}, repeats={report.repeats})"
