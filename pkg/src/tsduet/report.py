"""Run artifacts: delimited reports plus rendered figures.

Every CLI report path writes a CSV and a matching PNG next to it.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_curves(trace, path) -> None:
    """Per-epoch loss components from a pretrain trace."""
    fig, ax = plt.subplots(figsize=(7, 4))
    epochs = np.arange(1, len(trace) + 1)
    for key in ("l_time1", "l_time2", "l_fft", "l_sign", "l_pred", "total"):
        ax.plot(epochs, [r.as_dict()[key] for r in trace], label=key,
                lw=2 if key == "total" else 1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    _finish(fig, path)


def save_score_plot(series_values, scores, path, selected: str | None = None) -> None:
    """Input series over fused/per-head anomaly scores."""
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(9, 5), sharex=True)
    ax0.plot(series_values[:, 0], lw=0.8, color="k")
    ax0.set_ylabel("series (ch0)")
    for name, s in scores.items():
        emph = name == selected
        ax1.plot(s.alpha, label=name, lw=2 if emph else 0.8, alpha=1.0 if emph else 0.6)
    ax1.set_ylabel("anomaly score")
    ax1.set_xlabel("t")
    ax1.legend(fontsize=8)
    _finish(fig, path)


def save_imputation_bars(rows, path) -> None:
    """Masked MSE per method, grouped by mask ratio. Rows are dicts with
    keys (kind, ratio, method, mse)."""
    methods = sorted({r["method"] for r in rows}, key=str)
    ratios = sorted({r["ratio"] for r in rows})
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / max(len(methods), 1)
    for mi, method in enumerate(methods):
        vals = []
        for ratio in ratios:
            match = [r["mse"] for r in rows if r["method"] == method and r["ratio"] == ratio]
            vals.append(match[0] if match else np.nan)
        ax.bar(np.arange(len(ratios)) + mi * width, vals, width, label=method)
    ax.set_xticks(np.arange(len(ratios)) + 0.4 - width / 2)
    ax.set_xticklabels([f"{r:.3f}" for r in ratios])
    ax.set_xlabel("mask ratio")
    ax.set_ylabel("masked MSE")
    ax.legend(fontsize=8)
    _finish(fig, path)


def save_benchmark_curves(rows, path) -> None:
    """Retrieval metrics against augmentation strength."""
    fig, ax = plt.subplots(figsize=(7, 4))
    tasks = sorted({r["task"] for r in rows})
    for task in tasks:
        sub = sorted((r for r in rows if r["task"] == task), key=lambda r: r["s"])
        xs = [r["s"] for r in sub]
        for metric in ("prec", "mrr", "ap", "ndcg"):
            ax.plot(xs, [r[metric] for r in sub], marker="o", ms=3,
                    label=f"{task}:{metric}")
    ax.set_xlabel("augmentation strength s")
    ax.set_ylabel("metric@3")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=7, ncol=2)
    _finish(fig, path)


def save_sensitivity_curves(rows, path) -> None:
    """Distortion per view against perturbation level; one panel per
    perturbation kind. Rows: dicts (view, perturbation, level, delta)."""
    kinds = sorted({r["perturbation"] for r in rows})
    fig, axes = plt.subplots(1, max(len(kinds), 1), figsize=(4 * max(len(kinds), 1), 3.5))
    if len(kinds) == 1:
        axes = [axes]
    for ax, kind in zip(axes, kinds):
        for view in sorted({r["view"] for r in rows}):
            sub = sorted(
                (r for r in rows if r["view"] == view and r["perturbation"] == kind),
                key=lambda r: r["level"],
            )
            if sub:
                ax.plot([r["level"] for r in sub], [r["delta"] for r in sub],
                        marker="o", ms=3, label=view)
        ax.set_title(kind)
        ax.set_xlabel("level")
        ax.set_ylabel("distortion")
        ax.legend(fontsize=8)
    _finish(fig, path)


def save_corpus_preview(windows, path, n: int = 9) -> None:
    """Small grid of sample windows."""
    take = windows[:n]
    cols = 3
    rows_n = (len(take) + cols - 1) // cols
    fig, axes = plt.subplots(rows_n, cols, figsize=(9, 2.2 * rows_n), squeeze=False)
    for i, item in enumerate(take):
        ctx = item[0] if isinstance(item, tuple) else item
        ax = axes[i // cols][i % cols]
        ax.plot(np.asarray(ctx).reshape(-1), lw=0.8)
        ax.set_xticks([])
    for j in range(len(take), rows_n * cols):
        axes[j // cols][j % cols].axis("off")
    _finish(fig, path)


def save_training_curve(values, path, ylabel: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(1, len(values) + 1), values, marker="o", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    _finish(fig, path)
