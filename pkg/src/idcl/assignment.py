"""Density cores, core-based Student-t soft assignment and the sharpened target."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .numerics import as_embedding, rank_index, sq_dists


@dataclass
class ClusterState:
    k: int
    labels: np.ndarray
    cores: List[np.ndarray]
    lambda2: float = 0.05
    # frozen core coordinates; when None they are read from the current Z
    core_points: Optional[List[np.ndarray]] = field(default=None, repr=False)


def density_core(cluster_members: Sequence[int], rho, lambda2: float = 0.05) -> np.ndarray:
    """The ``max(1, ceil(lambda2 * |C|))`` densest members of a cluster.

    Ties in density go to the smaller sample index. The result is sorted by
    decreasing density.
    """
    members = np.asarray(cluster_members, dtype=np.intp)
    if members.size == 0:
        raise ValueError("cannot take the density core of an empty cluster")
    m = rank_index(lambda2, members.size)
    dens = np.asarray(rho, dtype=np.float64)[members]
    # lexsort: last key is primary
    order = np.lexsort((members, -dens))
    return members[order[:m]]


def build_state(labels, rho, k: int, lambda2: float = 0.05) -> ClusterState:
    """Cluster state with a density core for each of the ``k`` clusters."""
    labels = np.asarray(labels, dtype=np.intp)
    cores = []
    for c in range(k):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            raise ValueError(f"cluster {c} is empty; re-cluster before building cores")
        cores.append(density_core(members, rho, lambda2))
    return ClusterState(k=k, labels=labels, cores=cores, lambda2=lambda2)


def freeze_cores(state: ClusterState, Z) -> ClusterState:
    """Copy of ``state`` whose core coordinates are pinned to the rows of ``Z``."""
    Z = as_embedding(Z)
    return ClusterState(
        k=state.k,
        labels=state.labels,
        cores=state.cores,
        lambda2=state.lambda2,
        core_points=[Z[c].copy() for c in state.cores],
    )


def core_points(Z: np.ndarray, state: ClusterState) -> List[np.ndarray]:
    if state.core_points is not None:
        return state.core_points
    for c, core in enumerate(state.cores):
        if len(core) == 0:
            raise ValueError(f"density core of cluster {c} is empty")
    return [Z[c] for c in state.cores]


def core_similarity(z_i, core_Z) -> float:
    """s_ik = sum over core members j of 1 / (1 + |z_i - z_j|^2)."""
    z_i = np.asarray(z_i, dtype=np.float64).reshape(1, -1)
    core_Z = np.asarray(core_Z, dtype=np.float64).reshape(-1, z_i.shape[1])
    return float((1.0 / (1.0 + sq_dists(z_i, core_Z))).sum())


def kernel_sums(Z, state: ClusterState) -> np.ndarray:
    """n x K matrix of core similarities (the unnormalized soft assignment)."""
    Z = as_embedding(Z)
    pts = core_points(Z, state)
    d = np.empty((Z.shape[0], state.k))
    for c, P in enumerate(pts):
        if len(P) == 0:
            raise ValueError(f"density core of cluster {c} is empty")
        d[:, c] = (1.0 / (1.0 + sq_dists(Z, P))).sum(axis=1)
    return d


def soft_assign(Z, state: ClusterState) -> np.ndarray:
    """Row-normalized core similarities, q_ik = s_ik / sum_k' s_ik'."""
    d = kernel_sums(Z, state)
    return d / d.sum(axis=1, keepdims=True)


def target_distribution(Q) -> np.ndarray:
    """Sharpened target: q_ik^2 / f_k, row-normalized, with f_k = sum_i q_ik."""
    Q = np.asarray(Q, dtype=np.float64)
    f = Q.sum(axis=0)
    if (f <= 0.0).any():
        raise ValueError(f"cluster {int(np.flatnonzero(f <= 0)[0])} has zero soft mass")
    w = Q**2 / f
    return w / w.sum(axis=1, keepdims=True)


def hard_labels(Q) -> np.ndarray:
    """Per-row argmax; numpy's argmax already returns the first maximum."""
    return np.argmax(np.asarray(Q), axis=1)
