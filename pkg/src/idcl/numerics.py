"""Dense primitives and order statistics shared across the package.

Random numbers come from :func:`make_rng`, a thin wrapper over numpy's
``Generator`` with the PCG64 bit generator. PCG64 output for a given seed is
fixed by numpy's stream-compatibility policy, so a seed fully determines every
draw on every platform.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """Return a PCG64 generator seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def as_embedding(Z) -> np.ndarray:
    """Validate an n x d embedding matrix and return it as float64."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 1 or Z.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {Z.shape}")
    bad = ~np.isfinite(Z).all(axis=1)
    if bad.any():
        raise ValueError(f"non-finite value in row {int(np.flatnonzero(bad)[0])}")
    return Z


def sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of ``A`` and rows of ``B``.

    Computed from explicit differences rather than the ``|a|^2 + |b|^2 - 2ab``
    expansion, which loses precision for nearby points.
    """
    out = np.empty((A.shape[0], B.shape[0]))
    for start in range(0, A.shape[0], 256):
        diff = A[start:start + 256, None, :] - B[None, :, :]
        out[start:start + 256] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def pairwise_sq_dists(Z) -> np.ndarray:
    """Symmetric n x n matrix of squared Euclidean distances between rows of Z."""
    Z = as_embedding(Z)
    D = sq_dists(Z, Z)
    # exact symmetry and zero diagonal regardless of summation order
    D = np.triu(D, 1)
    return D + D.T


def rank_select(values: Sequence[float], fraction: float) -> float:
    """Value at 1-based rank ``ceil(fraction * len)`` of ``values`` sorted ascending."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel(), kind="stable")
    if v.size == 0:
        raise ValueError("rank_select needs at least one value")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    return float(v[rank_index(fraction, v.size) - 1])


def rank_index(fraction: float, size: int) -> int:
    """1-based position ``ceil(fraction * size)`` clamped to ``[1, size]``."""
    # round first so that e.g. 0.07 * 100 = 7.000000000000001 maps to 7
    pos = math.ceil(round(fraction * size, 9))
    return min(max(pos, 1), size)


def max_min_normalize(values) -> np.ndarray:
    """Rescale to [0, 1]; a constant input maps to all ones."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot normalize an empty sequence")
    if not np.isfinite(v).all():
        raise ValueError("values must be finite")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.ones_like(v)
    return (v - lo) / (hi - lo)
