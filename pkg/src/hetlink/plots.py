"""Matplotlib renderings of the toolkit's reports.

Every figure is written next to the delimited file it visualizes; the
CSV/JSON stays the primary artifact and nothing here feeds back into
computation.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

PARAMS = {
    "figure.figsize": (7, 4.5),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.labelsize": 11,
    "legend.fontsize": 9,
}
plt.rcParams.update(PARAMS)


def save_entropy_histogram(record, path) -> Path:
    """Histogram of per-node attention entropies for one layer."""
    fig, ax = plt.subplots()
    ax.hist(record.entropies, bins=30, color="#3566a5", edgecolor="black",
            linewidth=0.4)
    ax.set_xlabel("attention entropy (nats)")
    ax.set_ylabel("nodes")
    ax.set_title(f"Layer {record.layer} attention entropy "
                 f"({len(record.node_ids)} nodes with incoming edges)")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def save_training_curves(log_rows, path) -> Path:
    """Loss and validation AUC over epochs from a training log."""
    epochs = [row["epoch"] for row in log_rows]
    loss = [row["loss"] for row in log_rows]
    val_auc = [row["val_auc"] for row in log_rows]
    fig, ax = plt.subplots()
    ax.plot(epochs, loss, "o-", color="#b4432f", markersize=3, label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss", color="#b4432f")
    ax2 = ax.twinx()
    ax2.plot(epochs, val_auc, "s--", color="#3566a5", markersize=3,
             label="validation AUC")
    ax2.set_ylabel("validation AUC", color="#3566a5")
    ax2.grid(False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def save_margin_sweep(margins, means, stds, path, metric="Hit@10") -> Path:
    fig, ax = plt.subplots()
    ax.errorbar(margins, means, yerr=stds, fmt="o-", color="#3566a5",
                capsize=3, markersize=4)
    ax.set_xlabel("selection margin")
    ax.set_ylabel(f"mean test {metric}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def save_pool_size_rates(pool_sizes, series, path) -> Path:
    """False-negative rate vs pool size for each sampling strategy."""
    fig, ax = plt.subplots()
    for label, rates in series.items():
        ax.plot(pool_sizes, rates, "o-", markersize=4, label=label)
    ax.set_xscale("log")
    ax.set_xlabel("candidate pool size")
    ax.set_ylabel("false-negative rate of selected negatives")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def save_ablation_bars(cells, path) -> Path:
    """Mean test AUC for the attention x sampler ablation grid."""
    labels = list(cells)
    means = [float(np.mean(cells[k])) for k in labels]
    stds = [float(np.std(cells[k])) for k in labels]
    fig, ax = plt.subplots()
    x = np.arange(len(labels))
    ax.bar(x, means, yerr=stds, capsize=4, color="#3566a5",
           edgecolor="black", linewidth=0.4)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=15, ha="right", fontsize=9)
    ax.set_ylabel("mean test AUC")
    lo = min(means) - 3 * max(stds + [0.005])
    ax.set_ylim(max(0.0, lo), 1.0)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
