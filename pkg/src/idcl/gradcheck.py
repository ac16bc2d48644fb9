"""Random small instances for checking analytic gradients against central
finite differences."""
from __future__ import annotations

import numpy as np

from . import autoencoder as ae
from .assignment import ClusterState
from .objective import grad_check, relative_error


def random_stochastic(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    w = rng.uniform(0.05, 1.0, size=(n, k))
    return w / w.sum(axis=1, keepdims=True)


def random_state(rng: np.random.Generator, Z: np.ndarray, k: int) -> ClusterState:
    """Cluster state whose cores are frozen points scattered around Z."""
    d = Z.shape[1]
    pts = [Z.mean(axis=0) + rng.normal(scale=1.0, size=(int(rng.integers(1, 4)), d))
           for _ in range(k)]
    labels = rng.integers(0, k, size=Z.shape[0])
    return ClusterState(k=k, labels=labels, cores=[np.arange(len(p)) for p in pts],
                        core_points=pts)


def random_clu_check(rng: np.random.Generator, step: float = 1e-5) -> float:
    n = int(rng.integers(2, 9))
    d = int(rng.integers(1, 17))
    k = int(rng.integers(2, 4))
    Z = rng.normal(size=(n, d))
    state = random_state(rng, Z, k)
    return grad_check(Z, random_stochastic(rng, n, k), state, step)


def network_fd(params: ae.NetworkParams, X, P, state, alpha: float, step: float = 1e-6):
    """(analytic, numeric) flattened parameter gradients of the total batch loss."""
    _, grads = ae.loss_and_grads(params, X, P, state, alpha)
    analytic = np.concatenate([g.ravel() for pair in grads for g in pair])
    numeric = []
    for layer in params.layers:
        for arr in (layer.W, layer.b):
            for idx in np.ndindex(*arr.shape):
                orig = arr[idx]
                arr[idx] = orig + step
                up = ae.batch_loss(params, X, P, state, alpha)[2]
                arr[idx] = orig - step
                down = ae.batch_loss(params, X, P, state, alpha)[2]
                arr[idx] = orig
                numeric.append((up - down) / (2.0 * step))
    return analytic, np.asarray(numeric)


def random_network_check(rng: np.random.Generator, step: float = 1e-5) -> float:
    n = int(rng.integers(2, 9))
    m = int(rng.integers(2, 17))
    widths = tuple(int(w) for w in rng.integers(2, 17, size=int(rng.integers(1, 3))))
    d = int(rng.integers(1, 17))
    k = int(rng.integers(1, 4))
    params = ae.init_params(m, widths, d, rng)
    for layer in params.layers:
        layer.b[:] = rng.normal(scale=0.1, size=layer.b.shape)
    X = rng.uniform(size=(n, m))
    Z = ae.encode(params, X)
    state = random_state(rng, Z, k)
    P = random_stochastic(rng, n, k)
    alpha = float(rng.uniform(0.05, 1.0))
    analytic, numeric = network_fd(params, X, P, state, alpha, step)
    return relative_error(analytic, numeric, atol=1e-6)
