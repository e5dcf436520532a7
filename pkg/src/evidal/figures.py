"""Figure rendering for the report path: budget curves with seed spread and a
class-gain heatmap, written as PNG files next to the tables."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .reporting import RunRecord, class_gain_table, summarize


def render_budget_curves(runs: list[RunRecord], path: str | Path) -> Path:
    """Mean macro AUROC vs annotation budget per method+sampler group, with a
    +-1 std band across seeds."""
    summary = summarize(runs)
    budgets = np.asarray(summary["budgets"]) * 100.0
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for name, stats in summary["groups"].items():
        mean = np.asarray(stats["macro_auroc_mean"])
        std = np.asarray(stats["macro_auroc_std"])
        line, = ax.plot(budgets, mean, marker="o", markersize=3, label=name)
        ax.fill_between(budgets, mean - std, mean + std,
                        color=line.get_color(), alpha=0.15, linewidth=0)
    ax.set_xlabel("annotation budget (%)")
    ax.set_ylabel("macro test AUROC")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_class_gains(runs: list[RunRecord], baseline: str, path: str | Path,
                       order: str = "desc") -> Path:
    """Heatmap of final-budget per-class AUROC gains (%) over the baseline,
    classes ordered by test prevalence."""
    class_order, names, gains = class_gain_table(runs, baseline, order)
    fig, ax = plt.subplots(figsize=(1.2 + 0.8 * len(names),
                                    1.0 + 0.3 * len(class_order)))
    limit = np.nanmax(np.abs(gains)) if np.isfinite(gains).any() else 1.0
    limit = max(limit, 1e-6)
    im = ax.imshow(gains, aspect="auto", cmap="RdBu_r", vmin=-limit, vmax=limit)
    ax.set_xticks(range(len(names)), names, rotation=45, ha="right", fontsize=8)
    prevalence = runs[0].test_prevalence
    ax.set_yticks(range(len(class_order)),
                  [f"c{cls} ({prevalence[cls]:.3f})" for cls in class_order],
                  fontsize=8)
    for i in range(gains.shape[0]):
        for j in range(gains.shape[1]):
            if np.isfinite(gains[i, j]):
                ax.text(j, i, f"{gains[i, j]:+.1f}", ha="center", va="center",
                        fontsize=7)
    ax.set_title(f"AUROC gain (%) vs {baseline}", fontsize=10)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
