import struct

import numpy as np
import pytest

from merlin_arthur.neural import (CheckpointError, Network, OptimizerState, class_targets, conv,
                                  dense, describe, grad_input, grad_params, load_checkpoint, mlp,
                                  opt_step, relu, save_checkpoint)
from merlin_arthur.provers import MERLIN, MORGANA, prover_grad, prover_loss


def numeric_grad(f, theta, h=1e-4):
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b)))


def tiny_net(seed=0):
    return Network.create([dense(2, 2), relu(), dense(2, 3)], n_classes=2, seed=seed)


def test_forward_is_distribution():
    net = mlp(d_in=16, hidden=(8,), n_classes=3, seed=1)
    rng = np.random.default_rng(0)
    p = net.forward(rng.random((5, 16)))
    assert p.shape == (5, 4)
    assert np.all(p >= 0) and np.allclose(p.sum(axis=1), 1, atol=1e-9)
    assert net.forward(rng.random(16)).shape == (4,)


def test_zero_weights_give_uniform():
    net = mlp(d_in=6, hidden=(4,), n_classes=2)
    net.params[:] = 0
    np.testing.assert_allclose(net.forward(np.ones(6)), np.full(3, 1 / 3), atol=1e-15)


def test_forward_deterministic():
    x = np.linspace(0, 1, 16)
    a = mlp(d_in=16, hidden=(8,), seed=3).forward(x)
    b = mlp(d_in=16, hidden=(8,), seed=3).forward(x)
    assert a.tobytes() == b.tobytes()


def test_param_count_checked():
    with pytest.raises(ValueError):
        Network((dense(2, 3),), 2, np.zeros(5))


def _check_param_grad(net, x, t, w=None):
    loss, g = grad_params(net, x, t, w)
    theta0 = net.params.copy()

    def f(theta):
        net.params = theta
        return net.loss_grad(x, t, w, want_params=False)[0]

    num = numeric_grad(f, theta0)
    net.params = theta0
    return rel_err(g, num)


def test_grad_params_small_net():
    net = Network.create([dense(1, 2), relu(), dense(2, 2)], n_classes=1, seed=0)
    assert net.params.size == 10
    rng = np.random.default_rng(0)
    x = rng.random((4, 1))
    t = class_targets([0, 0, 0, 0], 1, with_idk=False)
    t[1] = [1, 0]
    assert _check_param_grad(net, x, t) <= 1e-3


@pytest.mark.parametrize("layers,d", [
    ([dense(5, 4), relu(), dense(4, 3)], 5),
    ([conv(1, 2, 3, 4, 4), relu(), dense(8, 3)], 16),
    ([conv(1, 2, 2, 3, 3), dense(8, 4), relu(), dense(4, 3)], 9),
])
def test_grad_params_every_layer_type(layers, d):
    rng = np.random.default_rng(7)
    net = Network.create(layers, n_classes=2, seed=2)
    net.params = rng.uniform(-0.1, 0.1, net.params.size) + net.params * 0.1
    x = rng.random((3, d))
    t = class_targets([0, 1, 0], 2, with_idk=True)
    t[2, 0] = 0
    assert _check_param_grad(net, x, t, np.array([1.0, 0.5, 2.0])) <= 1e-3


def test_saturated_loss_has_small_gradient():
    net = Network.create([dense(2, 3)], n_classes=2)
    net.params[:] = 0
    net.params[6 + 2] = 40.0  # bias of output 2 dominates
    loss, g = grad_params(net, np.ones((1, 2)), class_targets([1], 2))
    assert loss < 1e-12 and np.abs(g).max() < 1e-12


def test_duplicated_batch_same_gradient():
    net = tiny_net()
    x = np.array([[0.1, 0.9], [0.7, 0.2]])
    t = class_targets([0, 1], 2)
    _, g1 = grad_params(net, x, t)
    _, g2 = grad_params(net, np.vstack([x, x]), np.vstack([t, t]))
    np.testing.assert_allclose(g1, g2, atol=1e-15)


def test_grad_input_matches_finite_differences():
    net = Network.create([conv(1, 2, 2, 3, 3), relu(), dense(8, 3)], n_classes=2, seed=4)
    rng = np.random.default_rng(1)
    x = rng.random(9)
    t = class_targets([1], 2)
    _, g = grad_input(net, x, t)
    num = numeric_grad(lambda z: net.sample_losses(z, t)[0], x)
    assert rel_err(g[0], num) <= 1e-3


@pytest.mark.parametrize("direction", [MERLIN, MORGANA])
def test_mask_gradient_matches_finite_differences(direction):
    net = mlp(d_in=6, hidden=(5,), seed=5)
    rng = np.random.default_rng(2)
    x, s = rng.random(6), rng.random(6)
    _, g = prover_grad(net, x, s, 1, direction)
    num = numeric_grad(lambda z: prover_loss(net, x, z, 1, direction), s)
    assert g.shape == (1, 6)
    assert rel_err(g[0], num) <= 1e-3


def test_mask_gradient_vanishes_when_image_is_baseline():
    net = mlp(d_in=6, hidden=(5,), seed=5)
    _, g = prover_grad(net, np.full(6, 0.3), np.full(6, 0.5), 0, MERLIN, lam=0.0)
    assert np.abs(g).max() == 0.0


def test_adam_zero_gradient_keeps_params():
    net = tiny_net()
    before = net.params.copy()
    state = OptimizerState.for_network(net)
    opt_step(net, state, np.zeros_like(net.params))
    np.testing.assert_array_equal(net.params, before)


def test_adam_hand_computed_step():
    net = Network.create([dense(1, 2)], n_classes=1)
    net.params[:] = [0.5, -0.5, 0.0, 0.0]
    state = OptimizerState.for_network(net, lr=0.01)
    state.m[:] = [0.1, 0.0, 0.0, 0.0]
    state.v[:] = [0.01, 0.0, 0.0, 0.0]
    state.step = 1
    g = np.array([0.2, -0.4, 0.0, 1.0])
    opt_step(net, state, g)
    m = 0.9 * 0.1 + 0.1 * 0.2
    v = 0.999 * 0.01 + 0.001 * 0.04
    expected = 0.5 - 0.01 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    assert net.params[0] == pytest.approx(expected, abs=1e-12)
    m1 = 0.1 * -0.4
    v1 = 0.001 * 0.16
    expected1 = -0.5 - 0.01 * (m1 / 0.19) / (np.sqrt(v1 / (1 - 0.999 ** 2)) + 1e-8)
    assert net.params[1] == pytest.approx(expected1, abs=1e-12)


def _toy_training(seed=0, steps=100):
    rng = np.random.default_rng(11)
    x = rng.normal(size=(64, 2))
    y = (x[:, 0] + x[:, 1] > 0).astype(int)
    net = mlp(d_in=2, hidden=(8,), seed=seed)
    state = OptimizerState.for_network(net, lr=1e-2)
    t = class_targets(y, 2)
    losses = []
    for _ in range(steps):
        loss, g = grad_params(net, x, t)
        losses.append(loss)
        opt_step(net, state, g)
        assert np.allclose(net.forward(x).sum(axis=1), 1, atol=1e-9)
    return net, losses


def test_training_decreases_loss_and_is_deterministic():
    net, losses = _toy_training()
    assert losses[-1] < 0.5 * losses[0]
    net2, _ = _toy_training()
    assert net.params.tobytes() == net2.params.tobytes()


def test_checkpoint_round_trip(tmp_path):
    net = Network.create([conv(1, 2, 2, 3, 3), relu(), dense(8, 3)], n_classes=2, seed=9)
    path = tmp_path / "arthur.bin"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    assert back.params.tobytes() == net.params.tobytes()
    assert back.layers == net.layers and back.seed == 9 and back.n_classes == 2
    assert describe(back)[0] == {"kind": "conv", "dims": [1, 2, 2, 3, 3]}
    data = path.read_bytes()
    assert data[:4] == b"MANN"
    assert struct.unpack_from("<I", data, 4)[0] == 1


def test_checkpoint_errors(tmp_path):
    net = tiny_net()
    path = tmp_path / "a.bin"
    save_checkpoint(net, path)
    data = path.read_bytes()
    for bad in (b"XXXX" + data[4:], data[:-8], data[:10], data + b"\0" * 8,
                data[:4] + struct.pack("<I", 99) + data[8:]):
        path.write_bytes(bad)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
