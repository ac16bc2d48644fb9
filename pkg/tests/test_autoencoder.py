import struct

import numpy as np
import pytest

from idcl import autoencoder as ae
from idcl.gradcheck import network_fd, random_state, random_stochastic
from idcl.numerics import make_rng
from idcl.objective import relative_error


def identity_net(m):
    return ae.NetworkParams(
        [ae.Layer(np.eye(m), np.zeros(m), "linear")],
        [ae.Layer(np.eye(m), np.zeros(m), "linear")],
    )


def test_init_deterministic_and_shapes():
    a = ae.init_params(64, [512, 512, 3072], 10, make_rng(1))
    b = ae.init_params(64, [512, 512, 3072], 10, make_rng(1))
    assert [l.W.shape for l in a.encoder] == [(64, 512), (512, 512), (512, 3072), (3072, 10)]
    assert [l.W.shape for l in a.decoder] == [(10, 3072), (3072, 512), (512, 512), (512, 64)]
    assert all(np.array_equal(x.W, y.W) for x, y in zip(a.layers, b.layers))
    assert all(np.all(l.b == 0) for l in a.layers)
    assert [l.activation for l in a.encoder] == ["relu", "relu", "relu", "linear"]
    assert a.decoder[-1].activation == "linear"
    lim = np.sqrt(6 / 64)
    assert np.abs(a.encoder[0].W).max() <= lim


def test_init_rejects_zero_width():
    with pytest.raises(ValueError):
        ae.init_params(4, [0], 2, make_rng(0))


def test_identity_encode_and_shapes():
    X = make_rng(2).normal(size=(5, 3))
    net = identity_net(3)
    np.testing.assert_array_equal(ae.encode(net, X), X)
    np.testing.assert_array_equal(ae.decode(net, ae.encode(net, X)), X)
    big = ae.init_params(8, [6], 4, make_rng(3))
    assert ae.encode(big, np.zeros((7, 8))).shape == (7, 4)
    assert ae.forward(big, np.zeros((7, 8))).xhat.shape == (7, 8)
    with pytest.raises(ValueError):
        ae.encode(big, np.zeros((7, 9)))


def test_relu_clips_negative():
    net = ae.NetworkParams(
        [ae.Layer(np.array([[1.0]]), np.array([-5.0]), "relu"),
         ae.Layer(np.array([[1.0]]), np.zeros(1), "linear")],
        [ae.Layer(np.array([[1.0]]), np.zeros(1), "linear")],
    )
    assert ae.encode(net, [[2.0]])[0, 0] == 0.0
    assert ae.encode(net, [[7.0]])[0, 0] == 2.0


def test_backward_linear_identity():
    rng = make_rng(4)
    X = rng.normal(size=(4, 3))
    G = rng.normal(size=(4, 3))
    net = identity_net(3)
    grads = ae.backward(net, ae.forward(net, X), None, G, alpha=0.3)
    np.testing.assert_allclose(grads[0][0], X.T @ G * 0.3, rtol=1e-14)
    np.testing.assert_allclose(grads[0][1], G.sum(0) * 0.3, rtol=1e-14)
    assert np.all(grads[1][0] == 0)


def test_backward_zero_bottleneck_is_plain_autoencoder():
    rng = make_rng(5)
    net = ae.init_params(5, [4], 2, rng)
    X = rng.uniform(size=(3, 5))
    cache = ae.forward(net, X)
    gr = rng.normal(size=(3, 5))
    a = ae.backward(net, cache, gr, np.zeros((3, 2)), 0.7)
    b = ae.backward(net, cache, gr)
    for (wa, ba), (wb, bb) in zip(a, b):
        np.testing.assert_array_equal(wa, wb)
        np.testing.assert_array_equal(ba, bb)


def test_stale_cache_rejected():
    rng = make_rng(6)
    net = ae.init_params(4, [3], 2, rng)
    X = rng.uniform(size=(2, 4))
    cache = ae.forward(net, X)
    (_, grads) = ae.loss_and_grads(net, X)
    ae.update_step(net, grads, ae.init_optimizer(net))
    with pytest.raises(RuntimeError):
        ae.backward(net, cache, np.zeros((2, 4)))
    with pytest.raises(RuntimeError):
        ae.backward(net.copy(), ae.forward(net, X), np.zeros((2, 4)))


def test_full_network_finite_differences():
    rng = make_rng(7)
    net = ae.init_params(6, [5, 4], 3, rng)
    for layer in net.layers:
        layer.b[:] = rng.normal(scale=0.1, size=layer.b.shape)
    X = rng.uniform(size=(5, 6))
    state = random_state(rng, ae.encode(net, X), 2)
    P = random_stochastic(rng, 5, 2)
    analytic, numeric = network_fd(net, X, P, state, 0.1, 1e-5)
    assert relative_error(analytic, numeric, atol=1e-6) < 1e-4


def test_adam_first_step_is_lr():
    net = identity_net(2)
    opt = ae.init_optimizer(net, lr=0.01)
    before = net.encoder[0].W.copy()
    grads = [(np.full((2, 2), g), np.zeros(2)) for g in (3.7, -0.002)]
    ae.update_step(net, grads, opt)
    np.testing.assert_allclose(net.encoder[0].W - before, -0.01, rtol=1e-6)
    np.testing.assert_allclose(net.decoder[0].W - np.eye(2), 0.01, rtol=1e-4)
    assert np.all(net.encoder[0].b == 0)
    assert opt.step_count == 1


def test_adam_zero_gradient_is_noop():
    net = ae.init_params(3, [2], 1, make_rng(8))
    ref = net.copy()
    grads = [(np.zeros_like(l.W), np.zeros_like(l.b)) for l in net.layers]
    ae.update_step(net, grads, ae.init_optimizer(net))
    assert all(np.array_equal(a.W, b.W) for a, b in zip(net.layers, ref.layers))


def test_pretrain_reduces_loss_and_is_deterministic():
    def run():
        rng = make_rng(9)
        X = np.clip(rng.normal(0.5, 0.1, size=(120, 16)) + (rng.random((120, 1)) > 0.5) * 0.3, 0, 1)
        net = ae.init_params(16, [32], 4, rng)
        hist = []
        ae.pretrain(net, X, epochs=40, batch_size=32, rng=rng, lr=1e-3, history=hist)
        return net, hist

    net, hist = run()
    assert hist[-1] < hist[0]
    avg = np.convolve(hist, np.ones(10) / 10, mode="valid")
    assert avg[-1] < avg[0]
    net2, hist2 = run()
    assert hist == hist2
    assert all(np.array_equal(a.W, b.W) for a, b in zip(net.layers, net2.layers))


def test_pretrain_constant_data():
    rng = make_rng(10)
    X = np.full((50, 8), 0.4)
    net = ae.init_params(8, [8], 2, rng)
    hist = []
    ae.pretrain(net, X, epochs=200, batch_size=64, rng=rng, lr=1e-2, history=hist)
    assert hist[-1] < 1e-3


def test_pretrain_single_step_when_batch_covers_data():
    net = ae.init_params(3, [2], 1, make_rng(11))
    opt = ae.init_optimizer(net)
    ae.pretrain(net, np.zeros((4, 3)), epochs=1, batch_size=10, opt=opt)
    assert opt.step_count == 1 and net.version == 1
    with pytest.raises(ValueError):
        ae.pretrain(net, np.zeros((4, 3)), epochs=0)


def test_checkpoint_round_trip(tmp_path):
    rng = make_rng(12)
    net = ae.init_params(5, [4, 3], 2, rng)
    X = rng.uniform(size=(6, 5))
    opt = ae.init_optimizer(net, lr=0.003)
    for _ in range(3):
        ae.update_step(net, ae.loss_and_grads(net, X)[1], opt)
    blob = ae.dumps_checkpoint(net, opt)
    assert blob[:4] == b"IDCL"
    assert struct.unpack_from("<III", blob, 4) == (1, 6, 3)
    net2, opt2 = ae.loads_checkpoint(blob)
    assert ae.dumps_checkpoint(net2, opt2) == blob
    assert opt2.step_count == 3 and opt2.lr == 0.003
    path = tmp_path / "m.ckpt"
    ae.save_checkpoint(path, net)
    net3, opt3 = ae.load_checkpoint(path)
    assert opt3 is None
    np.testing.assert_array_equal(ae.encode(net3, X), ae.encode(net, X))


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError):
        ae.loads_checkpoint(b"NOPE" + bytes(20))
    blob = ae.dumps_checkpoint(ae.init_params(3, [2], 1, make_rng(0)))
    with pytest.raises(ValueError):
        ae.loads_checkpoint(blob[:-5])


def test_rescale_bottleneck_keeps_reconstruction():
    rng = make_rng(13)
    net = ae.init_params(6, [5], 3, rng)
    X = rng.uniform(size=(4, 6))
    before = ae.forward(net, X)
    ae.rescale_bottleneck(net, 2.5)
    after = ae.forward(net, X)
    np.testing.assert_allclose(after.z, 2.5 * before.z, rtol=1e-14)
    np.testing.assert_allclose(after.xhat, before.xhat, rtol=1e-12, atol=1e-14)
    with pytest.raises(ValueError):
        ae.rescale_bottleneck(net, 0.0)
