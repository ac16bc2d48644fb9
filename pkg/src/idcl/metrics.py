"""Clustering accuracy under the best label mapping, and NMI."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class EvalReport:
    acc: float
    nmi: float
    mapping: Dict[int, int]
    confusion: np.ndarray


def hungarian(cost) -> np.ndarray:
    """Column assigned to each row of a minimum-cost perfect matching.

    Rectangular matrices are zero-padded to square first, so the returned
    permutation covers ``max(rows, cols)`` indices.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be a matrix, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")
    size = max(cost.shape)
    square = np.zeros((size, size))
    square[: cost.shape[0], : cost.shape[1]] = cost
    rows, cols = linear_sum_assignment(square)
    perm = np.empty(size, dtype=np.intp)
    perm[rows] = cols
    return perm


def _check(true_labels, pred_labels):
    t = np.asarray(true_labels, dtype=np.intp).ravel()
    p = np.asarray(pred_labels, dtype=np.intp).ravel()
    if t.shape != p.shape:
        raise ValueError(f"label arrays differ in length: {t.size} vs {p.size}")
    if t.size == 0:
        raise ValueError("need at least one label")
    if (t < 0).any() or (p < 0).any():
        raise ValueError("labels must be non-negative integers")
    return t, p


def confusion_matrix(true_labels, pred_labels) -> np.ndarray:
    """Square count matrix, rows indexed by predicted cluster, columns by class."""
    t, p = _check(true_labels, pred_labels)
    size = int(max(t.max(), p.max())) + 1
    conf = np.zeros((size, size), dtype=np.int64)
    np.add.at(conf, (p, t), 1)
    return conf


def _best_mapping(conf):
    perm = hungarian(-conf)
    return perm, int(conf[np.arange(len(perm)), perm].sum())


def clustering_accuracy(true_labels, pred_labels) -> float:
    t, _ = _check(true_labels, pred_labels)
    _, matched = _best_mapping(confusion_matrix(true_labels, pred_labels))
    return matched / t.size


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(true_labels, pred_labels) -> float:
    """Mutual information normalized by the larger of the two entropies."""
    t, p = _check(true_labels, pred_labels)
    _, t_idx = np.unique(t, return_inverse=True)
    _, p_idx = np.unique(p, return_inverse=True)
    joint = np.zeros((t_idx.max() + 1, p_idx.max() + 1))
    np.add.at(joint, (t_idx, p_idx), 1.0)
    h_t = _entropy(joint.sum(axis=1))
    h_p = _entropy(joint.sum(axis=0))
    if h_t == 0.0 and h_p == 0.0:
        return 1.0
    if h_t == 0.0 or h_p == 0.0:
        return 0.0
    pij = joint / t.size
    outer = np.outer(pij.sum(axis=1), pij.sum(axis=0))
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    return max(0.0, mi / max(h_t, h_p))


def evaluate_labels(true_labels, pred_labels) -> EvalReport:
    conf = confusion_matrix(true_labels, pred_labels)
    perm, matched = _best_mapping(conf)
    present = set(np.unique(np.asarray(pred_labels)).tolist())
    mapping = {int(c): int(perm[c]) for c in range(len(perm)) if c in present}
    return EvalReport(
        acc=matched / conf.sum(),
        nmi=nmi(true_labels, pred_labels),
        mapping=mapping,
        confusion=conf,
    )
