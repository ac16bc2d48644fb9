"""Gaussian-kernel local density and density-based difficulty scores."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import as_embedding, max_min_normalize, pairwise_sq_dists, rank_index


@dataclass(frozen=True)
class DensityProfile:
    rho: np.ndarray
    dc: float
    delta: np.ndarray
    lambda1: float


def _select_dc_from_sq(D2: np.ndarray, lambda1: float) -> float:
    n = D2.shape[0]
    if n < 2:
        raise ValueError("cutoff distance needs at least two points")
    if not 0.0 < lambda1 <= 1.0:
        raise ValueError(f"lambda1 must lie in (0, 1], got {lambda1}")
    flat = D2.ravel()
    k = rank_index(lambda1, flat.size) - 1
    dc = float(np.sqrt(np.partition(flat, k)[k]))
    if dc > 0.0:
        return dc
    positive = flat[flat > 0.0]
    if positive.size == 0:
        return 1.0
    return float(np.sqrt(positive.min()))


def select_dc(Z, lambda1: float = 0.02) -> float:
    """Cutoff radius: the ``lambda1``-ranked value of all n^2 Euclidean distances.

    Self-distances are part of the pool. When the selected value is zero the
    smallest positive distance is used instead, and 1.0 if every point
    coincides.
    """
    return _select_dc_from_sq(pairwise_sq_dists(Z), lambda1)


def _density_from_sq(D2: np.ndarray, dc: float) -> np.ndarray:
    if not dc > 0.0:
        raise ValueError(f"dc must be positive, got {dc}")
    return np.exp(-D2 / (dc * dc)).sum(axis=1)


def local_density(Z, dc: float) -> np.ndarray:
    """rho_i = sum_j exp(-|z_i - z_j|^2 / dc^2), self term included."""
    return _density_from_sq(pairwise_sq_dists(Z), dc)


def difficulty_measurer(Z, lambda1: float = 0.02) -> DensityProfile:
    """Densities and difficulty scores for every row of Z.

    A higher score marks a sample in a denser neighbourhood, i.e. an easier
    one that enters the curriculum earlier.
    """
    Z = as_embedding(Z)
    D2 = pairwise_sq_dists(Z)
    dc = _select_dc_from_sq(D2, lambda1)
    rho = _density_from_sq(D2, dc)
    return DensityProfile(rho=rho, dc=dc, delta=max_min_normalize(rho), lambda1=lambda1)
