"""Figure rendering for evaluation reports.

Figures are rendered headlessly to files next to the CSV output; the CSV
stays the interchange format and the figures are the human-readable view.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_eval_figure", "render_comparison_figure", "METRIC_LABELS"]

METRIC_LABELS = {
    "reward": "reward (chains served)",
    "avg_waiting": "average waiting (slots)",
    "blocked": "blocked chains",
    "efficiency": "efficiency",
}


def _ci95(values: np.ndarray) -> float:
    if len(values) < 2:
        return 0.0
    return 1.96 * float(values.std(ddof=0)) / np.sqrt(len(values))


def render_eval_figure(rows, policy: str, path: str | Path) -> Path:
    """Per-seed metric bars with the mean and its 95% band, one panel per metric.

    ``rows`` is a sequence of (seed, metrics-mapping) pairs as produced by the
    evaluation table.
    """
    path = Path(path)
    seeds = [seed for seed, _ in rows]
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    for ax, metric in zip(axes.ravel(), METRIC_LABELS):
        values = np.asarray([row[metric] for _, row in rows], dtype=np.float64)
        ax.bar(range(len(seeds)), values, color="#4878a8", width=0.8)
        mean = values.mean()
        band = _ci95(values)
        ax.axhline(mean, color="#b0413e", lw=1.5, label=f"mean {mean:.2f}")
        if band:
            ax.axhspan(mean - band, mean + band, color="#b0413e", alpha=0.15)
        ax.set_title(METRIC_LABELS[metric], fontsize=10)
        ax.set_xlabel("seed index", fontsize=8)
        ax.tick_params(labelsize=8)
        ax.legend(fontsize=8, frameon=False)
    fig.suptitle(f"policy: {policy} ({len(seeds)} seeds)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_comparison_figure(tables: dict[str, list], path: str | Path) -> Path:
    """Grouped mean bars with 95% error bars, one panel per metric.

    ``tables`` maps a policy label to its (seed, metrics-mapping) rows.
    """
    path = Path(path)
    labels = list(tables)
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    colors = plt.get_cmap("tab10")
    for ax, metric in zip(axes.ravel(), METRIC_LABELS):
        means, bands = [], []
        for label in labels:
            values = np.asarray([row[metric] for _, row in tables[label]], dtype=np.float64)
            means.append(values.mean())
            bands.append(_ci95(values))
        xs = np.arange(len(labels))
        ax.bar(xs, means, yerr=bands, capsize=4,
               color=[colors(i % 10) for i in range(len(labels))])
        ax.set_xticks(xs)
        ax.set_xticklabels(labels, fontsize=8)
        ax.set_title(METRIC_LABELS[metric], fontsize=10)
        ax.tick_params(labelsize=8)
    fig.suptitle("policy comparison (mean with 95% interval)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
