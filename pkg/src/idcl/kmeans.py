"""k-means++ seeding and Lloyd iterations."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .numerics import as_embedding, sq_dists

log = logging.getLogger(__name__)


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    iterations: int
    inertia_history: List[float] = field(default_factory=list)


def kmeanspp_seed(Z, K: int, rng: np.random.Generator) -> np.ndarray:
    """Pick K data points: the first uniformly, the rest with probability
    proportional to squared distance from the nearest chosen point."""
    Z = as_embedding(Z)
    n = Z.shape[0]
    if not 1 <= K <= n:
        raise ValueError(f"need 1 <= K <= n, got K={K}, n={n}")
    chosen = [int(rng.integers(n))]
    closest = sq_dists(Z, Z[chosen[0]:chosen[0] + 1])[:, 0]
    for _ in range(1, K):
        total = closest.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # every point coincides with a chosen center
            remaining = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(remaining))
        chosen.append(idx)
        closest = np.minimum(closest, sq_dists(Z, Z[idx:idx + 1])[:, 0])
    return Z[chosen].copy()


def _assign(Z, centers):
    D = sq_dists(Z, centers)
    labels = np.argmin(D, axis=1)
    return labels, D[np.arange(len(Z)), labels]


def _repair_empty(Z, labels, dist, centers):
    K = centers.shape[0]
    for c in range(K):
        if np.any(labels == c):
            continue
        counts = np.bincount(labels, minlength=K)
        # only points whose cluster keeps at least one other member may move
        movable = counts[labels] > 1
        cand = np.where(movable, dist, -1.0)
        i = int(np.argmax(cand))
        labels[i] = c
        centers[c] = Z[i]
        dist[i] = 0.0
    return labels, dist, centers


def _means(Z, labels, K):
    sums = np.zeros((K, Z.shape[1]))
    np.add.at(sums, labels, Z)
    counts = np.bincount(labels, minlength=K)[:, None]
    return sums / counts


def lloyd(
    Z,
    K: int,
    rng: np.random.Generator,
    max_iter: int = 100,
    tol: float = 1e-6,
    init: Optional[np.ndarray] = None,
) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds (or ``init`` centers).

    Stops when no center moves by ``tol`` or more, or after ``max_iter``
    rounds. Raises RuntimeError if the inertia ever increases.
    """
    Z = as_embedding(Z)
    centers = kmeanspp_seed(Z, K, rng) if init is None else np.array(init, dtype=np.float64)
    if centers.shape != (K, Z.shape[1]):
        raise ValueError(f"initial centers must have shape {(K, Z.shape[1])}")
    history: List[float] = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        labels, dist = _assign(Z, centers)
        labels, dist, centers = _repair_empty(Z, labels, dist, centers)
        _record(history, float(dist.sum()))
        new = _means(Z, labels, K)
        shift = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).max())
        centers = new
        if shift < tol:
            break
    labels, dist = _assign(Z, centers)
    labels, dist, centers = _repair_empty(Z, labels, dist, centers)
    inertia = float(dist.sum())
    _record(history, inertia)
    return KMeansResult(labels, centers, inertia, iterations, history)


def _record(history: List[float], value: float) -> None:
    if history and value > history[-1] * (1.0 + 1e-12) + 1e-12:
        raise RuntimeError(f"k-means inertia increased from {history[-1]} to {value}")
    history.append(value)


def best_of(Z, K: int, seeds, **kwargs) -> KMeansResult:
    """Lowest-inertia result over independent runs, one per seed."""
    best = None
    for seed in seeds:
        res = lloyd(Z, K, np.random.default_rng(seed), **kwargs)
        if best is None or res.inertia < best.inertia:
            best = res
    return best
