"""Training driver: pretraining, then per-epoch density scoring, k-means,
density-core assignment, curriculum selection and mini-batch updates."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from typing import List, Optional, Tuple

import numpy as np

from . import autoencoder as ae
from .assignment import build_state, freeze_cores, hard_labels, soft_assign, target_distribution
from .curriculum import PaceSchedule, generate_curriculum
from .data_io import Dataset, augment
from .density import difficulty_measurer, select_dc
from .kmeans import best_of, lloyd
from .metrics import EvalReport, clustering_accuracy, evaluate_labels, hungarian, nmi
from .objective import clustering_loss, reconstruction_loss

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    k: int = 10
    alpha: float = 0.1
    lambda1: float = 0.02
    lambda2: float = 0.05
    zeta0: float = 0.6
    zeta_max: float = 0.95
    t_grow: int = 50
    mu: float = 0.001
    max_iter: int = 200
    pretrain_epochs: int = 100
    batch_size: int = 256
    lr: float = 0.001
    pretrain_lr: Optional[float] = None
    seed: Optional[int] = None
    layer_widths: Tuple[int, ...] = (512, 512, 3072)
    latent_dim: int = 10
    augment_pretrain: bool = False
    augment_train: bool = False
    warm_start: bool = False
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-6
    kmeans_restarts: int = 1
    latent_scale: float = 0.0

    def validate(self) -> "RunConfig":
        for name in ("lambda1", "lambda2", "zeta_max"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if not 0.0 < self.zeta0 < self.zeta_max:
            raise ValueError(f"zeta0 must lie in (0, zeta_max), got {self.zeta0}")
        if not 0.0 < self.mu <= 1.0:
            raise ValueError(f"mu must lie in (0, 1], got {self.mu}")
        for name in ("k", "max_iter", "batch_size", "t_grow", "latent_dim", "kmeans_max_iter",
                     "kmeans_restarts"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.pretrain_epochs < 0:
            raise ValueError("pretrain_epochs must be >= 0")
        if self.latent_scale < 0:
            raise ValueError("latent_scale must be >= 0 (0 disables rescaling)")
        if self.alpha < 0 or self.lr <= 0:
            raise ValueError("alpha must be >= 0 and lr > 0")
        if self.pretrain_lr is not None and self.pretrain_lr <= 0:
            raise ValueError("pretrain_lr must be > 0")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError(f"layer widths must be positive, got {self.layer_widths}")
        if self.seed is None:
            raise ValueError("a seed is required")
        return self

    @property
    def schedule(self) -> PaceSchedule:
        return PaceSchedule(self.zeta0, self.zeta_max, self.t_grow)

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]


@dataclass
class EpochRecord:
    epoch: int
    zeta: float
    selected: int
    l_rec: float
    l_clu: float
    total: float
    acc: Optional[float]
    nmi: Optional[float]
    label_change_frac: float


@dataclass
class TrainResult:
    labels: np.ndarray
    history: List[EpochRecord]
    params: ae.NetworkParams
    embeddings: np.ndarray
    optimizer: Optional[ae.OptimizerState] = None
    converged: bool = False
    pretrain_history: List[float] = field(default_factory=list)


class TrainingDiverged(RuntimeError):
    pass


def align_labels(new, old, k: int) -> np.ndarray:
    """Permutation p of cluster ids maximizing agreement of p[new] with old."""
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (np.asarray(new), np.asarray(old)), 1)
    return hungarian(-conf)[:k]


def _streams(seed: int):
    names = ("init", "pretrain", "kmeans", "train", "augment")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.Generator(np.random.PCG64(s)) for n, s in zip(names, children)}


def run_training(
    config: RunConfig,
    data: Dataset,
    params: Optional[ae.NetworkParams] = None,
    checkpoint_path=None,
) -> TrainResult:
    """Pretrain (unless ``params`` is given) and run the clustering epochs.

    Stops at the first epoch after the first whose hard labels differ from
    the previous epoch's on fewer than ``mu * n`` samples, or after
    ``max_iter`` epochs. Cluster ids from k-means are permuted each epoch to
    best agree with the previous labels, so the change count is not inflated
    by arbitrary renumbering.
    """
    config.validate()
    X = data.x
    n = X.shape[0]
    K = config.k
    if K > n:
        raise ValueError(f"cannot form {K} clusters from {n} samples")
    rngs = _streams(config.seed)

    pre_hist: List[float] = []
    if params is None:
        params = ae.init_params(X.shape[1], config.layer_widths, config.latent_dim, rngs["init"])
        if config.pretrain_epochs > 0:
            transform = None
            if config.augment_pretrain:
                transform = lambda b: augment(b, data.image_shape, rngs["augment"])
            ae.pretrain(params, X, config.pretrain_epochs, config.batch_size,
                        rngs["pretrain"], lr=config.pretrain_lr or config.lr,
                        history=pre_hist, transform=transform)
    if config.latent_scale > 0:
        dc = select_dc(ae.encode(params, X), config.lambda1)
        ae.rescale_bottleneck(params, config.latent_scale / dc)
        log.info("embedding rescaled by %.4g so that the cutoff distance is %g",
                 config.latent_scale / dc, config.latent_scale)
    opt = ae.init_optimizer(params, lr=config.lr)
    sched = config.schedule

    history: List[EpochRecord] = []
    Y = None
    centers = None
    Z = None
    converged = False
    for epoch in range(1, config.max_iter + 1):
        cache = ae.forward(params, X)
        Z = cache.z
        if not np.isfinite(Z).all():
            _abort(params, opt, checkpoint_path, f"non-finite embedding at epoch {epoch}")
        profile = difficulty_measurer(Z, config.lambda1)
        km = _cluster(Z, config, rngs["kmeans"], centers if config.warm_start else None)
        clusters = km.labels
        if Y is not None:
            perm = align_labels(clusters, Y, K)
            clusters = perm[clusters]
            inv = np.argsort(perm)
            km.centers = km.centers[inv]
        centers = km.centers
        state = freeze_cores(build_state(clusters, profile.rho, K, config.lambda2), Z)
        Q = soft_assign(Z, state)
        P = target_distribution(Q)
        Y_old, Y = Y, hard_labels(Q)
        change = 1.0 if Y_old is None else float(np.mean(Y_old != Y))

        members = [np.flatnonzero(clusters == c) for c in range(K)]
        cur = generate_curriculum(members, profile, epoch - 1, sched)
        l_rec = reconstruction_loss(X, cache.xhat)
        l_clu = clustering_loss(P, Q)
        total = l_rec + config.alpha * l_clu
        acc = nmi_v = None
        if data.labels is not None:
            acc = clustering_accuracy(data.labels, Y)
            nmi_v = nmi(data.labels, Y)
        rec = EpochRecord(epoch, cur.zeta_t, int(cur.selected.size), l_rec, l_clu,
                          total, acc, nmi_v, change)
        history.append(rec)
        log.info("epoch %d zeta %.4f selected %d l_rec %.5f l_clu %.5f change %.4f acc %s",
                 epoch, rec.zeta, rec.selected, l_rec, l_clu, change,
                 "-" if acc is None else f"{acc:.4f}")
        if not math.isfinite(total):
            _abort(params, opt, checkpoint_path, f"non-finite loss at epoch {epoch}")

        if Y_old is not None and change < config.mu:
            converged = True
            break

        order = cur.selected[rngs["train"].permutation(cur.selected.size)]
        for start in range(0, order.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            Xb = X[idx]
            if config.augment_train:
                Xb = augment(Xb, data.image_shape, rngs["augment"])
            (b_rec, b_clu, b_tot), grads = ae.loss_and_grads(params, Xb, P[idx], state, config.alpha)
            if not math.isfinite(b_tot):
                _abort(params, opt, checkpoint_path,
                       f"non-finite batch loss at epoch {epoch} (l_rec={b_rec}, l_clu={b_clu})")
            ae.update_step(params, grads, opt)
        if checkpoint_path is not None:
            ae.save_checkpoint(checkpoint_path, params, opt)

    return TrainResult(Y, history, params, Z, opt, converged, pre_hist)


def _cluster(Z, config: RunConfig, rng, init):
    """Warm-started Lloyd from ``init``, or the lowest-inertia of the
    configured number of k-means++ restarts."""
    if init is not None:
        return lloyd(Z, config.k, rng, config.kmeans_max_iter, config.kmeans_tol, init=init)
    best = None
    for _ in range(config.kmeans_restarts):
        res = lloyd(Z, config.k, rng, config.kmeans_max_iter, config.kmeans_tol)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def _abort(params, opt, checkpoint_path, msg):
    if checkpoint_path is not None:
        msg += f"; last checkpoint at {checkpoint_path}"
    log.error(msg)
    raise TrainingDiverged(msg)


def evaluate(labels, data: Dataset) -> EvalReport:
    if data.labels is None:
        raise ValueError(f"dataset {data.name!r} has no ground-truth labels")
    return evaluate_labels(data.labels, labels)


def kmeans_baseline(data: Dataset, k: int, seeds=range(10)) -> EvalReport:
    """Raw-feature k-means, lowest inertia over ``seeds``, scored against truth."""
    res = best_of(data.x, k, seeds)
    return evaluate(res.labels, data)
