"""Clustering and reconstruction losses, the analytic clustering gradient, and
a finite-difference checker for it."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assignment import ClusterState, core_points, freeze_cores, kernel_sums
from .numerics import as_embedding


@dataclass(frozen=True)
class LossBreakdown:
    l_rec: float
    l_clu: float
    alpha: float
    total: float


@dataclass(frozen=True)
class CluGradIntermediates:
    d: np.ndarray
    a: np.ndarray


def clustering_loss(P, Q) -> float:
    """KL(P || Q) summed over samples and clusters (not averaged)."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape:
        raise ValueError(f"P has shape {P.shape} but Q has {Q.shape}")
    mask = P > 0.0
    if (Q[mask] <= 0.0).any():
        raise ValueError("KL divergence is infinite: q_ik = 0 where p_ik > 0")
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def reconstruction_loss(X, Xhat) -> float:
    """Squared reconstruction error summed over features, averaged over samples."""
    X = np.asarray(X, dtype=np.float64)
    Xhat = np.asarray(Xhat, dtype=np.float64)
    if X.shape != Xhat.shape:
        raise ValueError(f"X has shape {X.shape} but reconstruction has {Xhat.shape}")
    r = X - Xhat
    return float(np.sum(r * r) / X.shape[0])


def total_loss(l_rec: float, l_clu: float, alpha: float = 0.1) -> LossBreakdown:
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    return LossBreakdown(l_rec=l_rec, l_clu=l_clu, alpha=alpha, total=l_rec + alpha * l_clu)


def intermediates(Z, state: ClusterState) -> CluGradIntermediates:
    d = kernel_sums(Z, state)
    return CluGradIntermediates(d=d, a=d.sum(axis=1))


def loss_from_kernel(P, d) -> float:
    """KL(P || Q) written as a function of the per-cluster kernel sums d_ik."""
    d = np.asarray(d, dtype=np.float64)
    return clustering_loss(P, d / d.sum(axis=1, keepdims=True))


def dloss_dkernel(P, d) -> np.ndarray:
    """Analytic derivative of :func:`loss_from_kernel`: (q_ik - p_ik) / d_ik.

    Relies on every row of P summing to one.
    """
    d = np.asarray(d, dtype=np.float64)
    q = d / d.sum(axis=1, keepdims=True)
    return (q - np.asarray(P)) / d


def clu_grad(Z, P, state: ClusterState) -> np.ndarray:
    """Gradient of KL(P || Q) with respect to each embedding row.

    P and the core coordinates are held fixed; the kernel derivative is taken
    with the vector difference z_i - z_j, so each row lives in R^d.
    """
    Z = as_embedding(Z)
    P = np.asarray(P, dtype=np.float64)
    pts = core_points(Z, state)
    d = kernel_sums(Z, state)
    q = d / d.sum(axis=1, keepdims=True)
    coef = 2.0 * (P - q) / d
    grad = np.zeros_like(Z)
    for c, C in enumerate(pts):
        diff2 = ((Z[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        w = 1.0 / (1.0 + diff2) ** 2
        # sum_j w_ij (z_i - z_j)
        pull = Z * w.sum(axis=1, keepdims=True) - w @ C
        grad += coef[:, c:c + 1] * pull
    return grad


def relative_error(analytic, numeric, atol: float = 1e-7) -> float:
    """Max elementwise relative error; entries where both sides are below
    ``atol`` in magnitude are compared absolutely."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    b = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(np.abs(a), np.abs(b))
    err = np.abs(a - b)
    rel = np.where(scale > atol, err / np.where(scale > atol, scale, 1.0), err)
    return float(rel.max()) if rel.size else 0.0


def numeric_clu_grad(Z, P, state: ClusterState, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of KL(P || soft_assign(Z)) with cores frozen."""
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    Z = as_embedding(Z).copy()
    frozen = state if state.core_points is not None else freeze_cores(state, Z)

    def loss(Zp):
        d = kernel_sums(Zp, frozen)
        return clustering_loss(P, d / d.sum(axis=1, keepdims=True))

    num = np.empty_like(Z)
    for idx in np.ndindex(*Z.shape):
        orig = Z[idx]
        Z[idx] = orig + step
        up = loss(Z)
        Z[idx] = orig - step
        down = loss(Z)
        Z[idx] = orig
        num[idx] = (up - down) / (2.0 * step)
    return num


def grad_check(Z, P, state: ClusterState, step: float = 1e-5) -> float:
    """Max relative error between :func:`clu_grad` and central differences."""
    Z = as_embedding(Z)
    frozen = state if state.core_points is not None else freeze_cores(state, Z)
    return relative_error(clu_grad(Z, P, frozen), numeric_clu_grad(Z, P, frozen, step))
