"""Fully-connected autoencoder with hand-written forward/backward passes,
an Adam update, reconstruction-only pretraining and a binary checkpoint format.

Checkpoint layout (all integers unsigned little-endian, floats IEEE-754
binary64 little-endian)::

    b"IDCL"                      magic
    u32   version                (1)
    u32   layer_count            encoder + decoder layers
    u32   encoder_count
    per layer:
        u32 rows, u32 cols, u8 activation (0 linear, 1 relu)
        f64[rows*cols]  weights, row-major
        f64[cols]       bias
    u8    has_optimizer
    if has_optimizer:
        u64 step_count
        f64 lr, beta1, beta2, eps
        per layer: f64 m_W, m_b, v_W, v_b  (shapes as the layer)
"""
from __future__ import annotations

import io
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .assignment import ClusterState, soft_assign
from .objective import clu_grad, clustering_loss, reconstruction_loss

log = logging.getLogger(__name__)

MAGIC = b"IDCL"
FORMAT_VERSION = 1
_ACT_CODES = {"linear": 0, "relu": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "relu"


@dataclass
class NetworkParams:
    encoder: List[Layer]
    decoder: List[Layer]
    version: int = 0

    @property
    def layers(self) -> List[Layer]:
        return self.encoder + self.decoder

    @property
    def input_dim(self) -> int:
        return self.encoder[0].W.shape[0]

    @property
    def bottleneck_dim(self) -> int:
        return self.encoder[-1].W.shape[1]

    def copy(self) -> "NetworkParams":
        dup = lambda ls: [Layer(l.W.copy(), l.b.copy(), l.activation) for l in ls]
        return NetworkParams(dup(self.encoder), dup(self.decoder), self.version)


@dataclass
class OptimizerState:
    first_moment: List[np.ndarray]
    second_moment: List[np.ndarray]
    step_count: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class ForwardCache:
    inputs: List[np.ndarray]
    preacts: List[np.ndarray]
    z: np.ndarray
    xhat: np.ndarray
    version: int
    owner: int = field(repr=False, default=0)


def init_params(
    input_dim: int,
    layer_widths: Sequence[int],
    bottleneck: int,
    rng: np.random.Generator,
) -> NetworkParams:
    """He-uniform weights U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases.

    The decoder mirrors the encoder widths in reverse. Hidden layers use ReLU;
    the bottleneck and the reconstruction layer are linear.
    """
    dims = [input_dim, *layer_widths, bottleneck]
    if any(int(w) < 1 for w in dims):
        raise ValueError(f"layer widths must be positive, got {dims}")

    def dense(fan_in, fan_out, act):
        limit = np.sqrt(6.0 / fan_in)
        W = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        return Layer(W, np.zeros(fan_out), act)

    n = len(dims) - 1
    encoder = [dense(dims[i], dims[i + 1], "relu" if i < n - 1 else "linear") for i in range(n)]
    rdims = dims[::-1]
    decoder = [dense(rdims[i], rdims[i + 1], "relu" if i < n - 1 else "linear") for i in range(n)]
    return NetworkParams(encoder, decoder)


def rescale_bottleneck(params: NetworkParams, c: float) -> NetworkParams:
    """Multiply the embedding by ``c`` without changing the reconstruction.

    The bottleneck layer and the first decoder layer act linearly on z, so
    scaling the former by c and the latter's weights by 1/c is exact up to
    rounding. Applied in place.
    """
    if not (np.isfinite(c) and c > 0):
        raise ValueError(f"scale must be positive and finite, got {c}")
    if params.encoder[-1].activation != "linear":
        raise ValueError("bottleneck layer must be linear to rescale")
    params.encoder[-1].W = params.encoder[-1].W * c
    params.encoder[-1].b = params.encoder[-1].b * c
    params.decoder[0].W = params.decoder[0].W / c
    params.version += 1
    return params


def _run(layers: Sequence[Layer], h: np.ndarray, inputs, preacts) -> np.ndarray:
    for layer in layers:
        inputs.append(h)
        a = h @ layer.W + layer.b
        preacts.append(a)
        h = np.maximum(a, 0.0) if layer.activation == "relu" else a
    return h


def _check_input(params: NetworkParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ValueError(f"expected input with {params.input_dim} columns, got shape {X.shape}")
    return X


def encode(params: NetworkParams, X) -> np.ndarray:
    h = _check_input(params, X)
    return _run(params.encoder, h, [], [])


def decode(params: NetworkParams, Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != params.bottleneck_dim:
        raise ValueError(f"expected codes with {params.bottleneck_dim} columns, got {Z.shape}")
    return _run(params.decoder, Z, [], [])


def forward(params: NetworkParams, X) -> ForwardCache:
    """Encode and decode ``X``, keeping the activations backward() needs."""
    X = _check_input(params, X)
    inputs: List[np.ndarray] = []
    preacts: List[np.ndarray] = []
    z = _run(params.encoder, X, inputs, preacts)
    xhat = _run(params.decoder, z, inputs, preacts)
    return ForwardCache(inputs, preacts, z, xhat, params.version, id(params))


def _back(layers, inputs, preacts, g, grads):
    for layer, h, a in zip(layers[::-1], inputs[::-1], preacts[::-1]):
        if layer.activation == "relu":
            g = g * (a > 0.0)
        grads.append((h.T @ g, g.sum(axis=0)))
        g = g @ layer.W.T
    return g


def backward(
    params: NetworkParams,
    cache: ForwardCache,
    grad_recon: Optional[np.ndarray],
    grad_clu: Optional[np.ndarray] = None,
    alpha: float = 1.0,
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Parameter gradients, one ``(dW, db)`` per layer in ``params.layers`` order.

    ``grad_recon`` is dL/d(reconstruction) and flows through the decoder then
    the encoder. ``alpha * grad_clu`` is added at the bottleneck, so it only
    reaches encoder weights.
    """
    if cache.version != params.version or cache.owner != id(params):
        raise RuntimeError("activation cache is stale: parameters changed since forward()")
    ne = len(params.encoder)
    grads: List[Tuple[np.ndarray, np.ndarray]] = []
    if grad_recon is None:
        grad_recon = np.zeros_like(cache.xhat)
    g = _back(params.decoder, cache.inputs[ne:], cache.preacts[ne:], grad_recon, grads)
    if grad_clu is not None:
        g = g + alpha * grad_clu
    _back(params.encoder, cache.inputs[:ne], cache.preacts[:ne], g, grads)
    return grads[::-1]


def batch_loss(
    params: NetworkParams,
    X,
    P=None,
    state: Optional[ClusterState] = None,
    alpha: float = 0.1,
) -> Tuple[float, float, float]:
    """(l_rec, l_clu, total) on a batch; the clustering term needs P and state."""
    cache = forward(params, X)
    l_rec = reconstruction_loss(X, cache.xhat)
    l_clu = 0.0
    if P is not None:
        l_clu = clustering_loss(P, soft_assign(cache.z, state))
    return l_rec, l_clu, l_rec + alpha * l_clu


def loss_and_grads(
    params: NetworkParams,
    X,
    P=None,
    state: Optional[ClusterState] = None,
    alpha: float = 0.1,
):
    """Losses and parameter gradients of l_rec + alpha * KL(P || Q) on a batch.

    ``state`` must carry frozen core coordinates when the cores are not rows
    of this batch; P is treated as a constant.
    """
    X = np.asarray(X, dtype=np.float64)
    cache = forward(params, X)
    m = X.shape[0]
    residual = cache.xhat - X
    l_rec = float(np.sum(residual * residual) / m)
    grad_recon = 2.0 * residual / m
    l_clu = 0.0
    g_clu = None
    if P is not None:
        Q = soft_assign(cache.z, state)
        l_clu = clustering_loss(P, Q)
        g_clu = clu_grad(cache.z, P, state)
    grads = backward(params, cache, grad_recon, g_clu, alpha)
    return (l_rec, l_clu, l_rec + alpha * l_clu), grads


def init_optimizer(params: NetworkParams, lr: float = 0.01, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    shapes = [a for l in params.layers for a in (l.W, l.b)]
    return OptimizerState(
        first_moment=[np.zeros_like(a) for a in shapes],
        second_moment=[np.zeros_like(a) for a in shapes],
        lr=lr, beta1=beta1, beta2=beta2, eps=eps,
    )


def update_step(params: NetworkParams, grads, opt: OptimizerState) -> NetworkParams:
    """One Adam step with bias correction, applied in place."""
    opt.step_count += 1
    t = opt.step_count
    c1 = 1.0 - opt.beta1**t
    c2 = 1.0 - opt.beta2**t
    flat = [g for pair in grads for g in pair]
    targets = [(l, name) for l in params.layers for name in ("W", "b")]
    if len(flat) != len(targets):
        raise ValueError("gradient list does not match the network layers")
    for i, ((layer, name), g) in enumerate(zip(targets, flat)):
        m, v = opt.first_moment[i], opt.second_moment[i]
        if m.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {m.shape}")
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        step = opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
        setattr(layer, name, getattr(layer, name) - step)
    params.version += 1
    return params


def pretrain(
    params: NetworkParams,
    X,
    epochs: int = 100,
    batch_size: int = 256,
    rng: Optional[np.random.Generator] = None,
    opt: Optional[OptimizerState] = None,
    lr: float = 0.01,
    history: Optional[list] = None,
    transform: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> NetworkParams:
    """Reconstruction-only training over shuffled mini-batches.

    Updates ``params`` in place and returns it. The sample-weighted mean
    reconstruction loss of each epoch is appended to ``history`` if given.
    ``transform``, if given, is applied to every batch before the step
    (used for augmentation).
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    X = np.asarray(X, dtype=np.float64)
    rng = rng if rng is not None else np.random.default_rng(0)
    opt = opt if opt is not None else init_optimizer(params, lr=lr)
    history = history if history is not None else []
    for epoch in range(epochs):
        order = rng.permutation(X.shape[0])
        total, count = 0.0, 0
        for start in range(0, len(order), batch_size):
            batch = X[order[start:start + batch_size]]
            if transform is not None:
                batch = transform(batch)
            (l_rec, _, _), grads = loss_and_grads(params, batch)
            if not np.isfinite(l_rec):
                raise FloatingPointError(f"reconstruction loss diverged at pretrain epoch {epoch + 1}")
            update_step(params, grads, opt)
            total += l_rec * len(batch)
            count += len(batch)
        history.append(total / count)
        log.debug("pretrain epoch %d l_rec %.6f", epoch + 1, history[-1])
    log.info("pretrain finished after %d epochs, l_rec %.6f", epochs, history[-1])
    return params


# -- checkpoint ---------------------------------------------------------------

def _write_array(buf, a):
    buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def dumps_checkpoint(params: NetworkParams, opt: Optional[OptimizerState] = None) -> bytes:
    buf = io.BytesIO()
    layers = params.layers
    buf.write(MAGIC)
    buf.write(struct.pack("<III", FORMAT_VERSION, len(layers), len(params.encoder)))
    for l in layers:
        rows, cols = l.W.shape
        buf.write(struct.pack("<IIB", rows, cols, _ACT_CODES[l.activation]))
        _write_array(buf, l.W)
        _write_array(buf, l.b)
    buf.write(struct.pack("<B", 1 if opt is not None else 0))
    if opt is not None:
        buf.write(struct.pack("<Q4d", opt.step_count, opt.lr, opt.beta1, opt.beta2, opt.eps))
        for i in range(0, len(opt.first_moment), 2):
            for arr in (opt.first_moment[i], opt.first_moment[i + 1],
                        opt.second_moment[i], opt.second_moment[i + 1]):
                _write_array(buf, arr)
    return buf.getvalue()


def loads_checkpoint(data: bytes) -> Tuple[NetworkParams, Optional[OptimizerState]]:
    view = memoryview(data)
    pos = 0

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise ValueError("checkpoint is truncated")
        out = struct.unpack_from(fmt, view, pos)
        pos += size
        return out

    def take_array(shape):
        nonlocal pos
        count = int(np.prod(shape))
        if pos + 8 * count > len(view):
            raise ValueError("checkpoint is truncated")
        a = np.frombuffer(view, dtype="<f8", count=count, offset=pos).astype(np.float64)
        pos += 8 * count
        return a.reshape(shape)

    if bytes(view[:4]) != MAGIC:
        raise ValueError(f"not an IDCL checkpoint (magic {bytes(view[:4])!r})")
    pos = 4
    version, n_layers, n_enc = take("<III")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    layers = []
    for _ in range(n_layers):
        rows, cols, act = take("<IIB")
        W = take_array((rows, cols))
        b = take_array((cols,))
        layers.append(Layer(W, b, _ACT_NAMES[act]))
    params = NetworkParams(layers[:n_enc], layers[n_enc:])
    (has_opt,) = take("<B")
    opt = None
    if has_opt:
        step, lr, b1, b2, eps = take("<Q4d")
        first, second = [], []
        for l in layers:
            mW, mb = take_array(l.W.shape), take_array(l.b.shape)
            vW, vb = take_array(l.W.shape), take_array(l.b.shape)
            first += [mW, mb]
            second += [vW, vb]
        opt = OptimizerState(first, second, step, lr, b1, b2, eps)
    if pos != len(view):
        raise ValueError(f"{len(view) - pos} trailing bytes after checkpoint")
    return params, opt


def atomic_write(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, params: NetworkParams, opt: Optional[OptimizerState] = None) -> None:
    atomic_write(path, dumps_checkpoint(params, opt))


def load_checkpoint(path) -> Tuple[NetworkParams, Optional[OptimizerState]]:
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())
