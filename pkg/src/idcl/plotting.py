"""Figures for a finished run, written next to the JSONL/CSV exports."""
from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def read_metrics(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _column(records, key):
    return np.array([np.nan if r.get(key) is None else r[key] for r in records], dtype=float)


def plot_history(records, out_path, title=None) -> str:
    """Four panels per epoch: ACC/NMI, losses, label changes, curriculum size."""
    epochs = _column(records, "epoch")
    fig, axes = plt.subplots(2, 2, figsize=(9, 6.5))

    ax = axes[0, 0]
    if np.isfinite(_column(records, "acc")).any():
        ax.plot(epochs, _column(records, "acc"), marker="o", ms=3, label="ACC")
        ax.plot(epochs, _column(records, "nmi"), marker="s", ms=3, label="NMI")
        ax.set_ylim(0, 1.02)
        ax.legend(frameon=False)
    else:
        ax.text(0.5, 0.5, "no ground truth", ha="center", va="center", transform=ax.transAxes)
    ax.set_ylabel("score")

    ax = axes[0, 1]
    ax.semilogy(epochs, _column(records, "l_rec"), label="reconstruction")
    ax.semilogy(epochs, np.maximum(_column(records, "l_clu"), 1e-12), label="KL(P||Q)")
    ax.legend(frameon=False)
    ax.set_ylabel("loss")

    ax = axes[1, 0]
    ax.plot(epochs, _column(records, "label_change_frac"), color="C3")
    ax.set_ylabel("label change fraction")

    ax = axes[1, 1]
    ax.plot(epochs, _column(records, "selected"), color="C2")
    ax.set_ylabel("curriculum size")
    twin = ax.twinx()
    twin.plot(epochs, _column(records, "zeta"), color="0.5", ls="--")
    twin.set_ylabel("pace")

    for ax in axes[1]:
        ax.set_xlabel("epoch")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return os.fspath(out_path)


def plot_embeddings(Z, pred, out_path, true=None) -> str:
    """Scatter of the first two principal components, colored by cluster.

    When ground truth is given, misassigned points (under the best mapping)
    are circled.
    """
    Z = np.asarray(Z, dtype=float)
    centered = Z - Z.mean(axis=0)
    if Z.shape[1] >= 2:
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        xy = centered @ vt[:2].T
    else:
        xy = np.column_stack([centered[:, 0], np.zeros(len(Z))])
    fig, ax = plt.subplots(figsize=(6, 5.5))
    ax.scatter(xy[:, 0], xy[:, 1], c=pred, cmap="tab10", s=8, lw=0)
    if true is not None:
        from .metrics import confusion_matrix, hungarian

        conf = confusion_matrix(true, pred)
        mapping = hungarian(-conf)
        wrong = mapping[np.asarray(pred)] != np.asarray(true)
        ax.scatter(xy[wrong, 0], xy[wrong, 1], s=30, facecolors="none", edgecolors="k", lw=0.6)
        ax.set_title(f"{int(wrong.sum())} of {len(Z)} points misassigned")
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return os.fspath(out_path)
