import math

import numpy as np
import pytest

from tnn_spde.diffnet import NetArchitecture, Subnetwork, backward_params, forward_jet, init_subnetwork
from tnn_spde.errors import InvalidArgumentError


def single_unit(w, b):
    net = Subnetwork(NetArchitecture(hidden_layers=1, width=1, p=1))
    net.weights[0][...] = w
    net.biases[0][...] = b
    net.weights[1][...] = 1.0
    return net


def test_single_sine_unit_closed_form():
    jet = forward_jet(single_unit(math.pi, 0.0), [0.0], 2)
    assert jet.value[0, 0] == pytest.approx(0.0, abs=1e-16)
    assert jet.d1[0, 0] == pytest.approx(math.pi, rel=1e-15)
    assert jet.d2[0, 0] == pytest.approx(0.0, abs=1e-15)


def test_single_unit_against_analytic_jet(rng):
    w, b = 1.7, -0.4
    x = rng.uniform(-2, 2, 9)
    jet = forward_jet(single_unit(w, b), x, 2)
    np.testing.assert_allclose(jet.value[:, 0], np.sin(w * x + b), rtol=1e-15, atol=1e-16)
    np.testing.assert_allclose(jet.d1[:, 0], w * np.cos(w * x + b), rtol=1e-14, atol=1e-15)
    np.testing.assert_allclose(jet.d2[:, 0], -w * w * np.sin(w * x + b), rtol=1e-14, atol=1e-15)


def test_zero_weights_give_constant_output():
    # the output layer is affine, so with all weights zero each column is its output bias
    net = Subnetwork(NetArchitecture(2, 5, 3))
    net.biases[-1][...] = [0.3, -1.0, 2.0]
    net.biases[0][...] = 0.7
    jet = forward_jet(net, np.linspace(-1, 1, 6), 2)
    np.testing.assert_array_equal(jet.value, np.tile([0.3, -1.0, 2.0], (6, 1)))
    assert not jet.d1.any() and not jet.d2.any()


def test_parameter_count():
    arch = NetArchitecture(hidden_layers=1, width=2, p=1)
    assert arch.n_params == 7
    assert NetArchitecture().n_params == (100 + 100) + 2 * (100 * 100 + 100) + (100 * 50 + 50)


def test_init_determinism_and_ranges():
    arch = NetArchitecture(3, 40, 6)
    a, b = init_subnetwork(arch, 11), init_subnetwork(arch, 11)
    assert np.array_equal(a.params, b.params)
    assert not np.array_equal(a.params, init_subnetwork(arch, 12).params)
    for w, bias in zip(a.weights, a.biases):
        bound = math.sqrt(1.0 / w.shape[1])
        assert np.all(np.abs(w) <= bound)
        assert not bias.any()


def test_zero_bias_network_is_odd(rng):
    net = init_subnetwork(NetArchitecture(3, 20, 4), 3)
    x = rng.uniform(0, 1, 10)
    np.testing.assert_allclose(forward_jet(net, -x).value, -forward_jet(net, x).value, atol=1e-15)


def random_net(seed, arch=NetArchitecture(3, 12, 4)):
    net = init_subnetwork(arch, seed)
    net.biases[0][...] = np.random.default_rng(seed).uniform(-1, 1, net.biases[0].shape)
    for b in net.biases[1:]:
        b[...] = np.random.default_rng(seed + 1).uniform(-0.3, 0.3, b.shape)
    return net


def test_first_derivative_against_central_difference():
    net = random_net(0)
    x, h = np.array([0.37]), 1e-5
    jet = forward_jet(net, x, 1)
    fd = (forward_jet(net, x + h).value - forward_jet(net, x - h).value) / (2 * h)
    assert np.max(np.abs(fd - jet.d1) / np.abs(jet.d1)) <= 1e-6


def test_jet_consistency_orders_one_and_two(rng):
    net = random_net(4)
    x, h = rng.uniform(-1, 1, 20), 1e-4
    jet = forward_jet(net, x, 2)
    vp, vm = forward_jet(net, x + h).value, forward_jet(net, x - h).value
    d1 = (vp - vm) / (2 * h)
    d2 = (vp - 2 * jet.value + vm) / h**2
    assert np.max(np.abs(d1 - jet.d1)) <= 1e-5 * np.max(np.abs(jet.d1))
    assert np.max(np.abs(d2 - jet.d2)) <= 1e-5 * np.max(np.abs(jet.d2))


def functional(net, x, adjoints):
    jet = forward_jet(net, x, len(adjoints) - 1)
    return sum(float(np.sum(a * jet[k])) for k, a in enumerate(adjoints) if a is not None)


@pytest.mark.parametrize("orders", [1, 2, 3])
def test_parameter_gradient_finite_differences(rng, orders):
    net = random_net(7)
    x = rng.uniform(-1, 1, 15)
    adj = [rng.standard_normal((15, 4)) for _ in range(orders)]
    g = backward_params(net, x, adj)
    scale = np.max(np.abs(g))
    h = 1e-6
    for i in rng.choice(net.params.size, 50, replace=False):
        old = net.params[i]
        net.params[i] = old + h
        fp = functional(net, x, adj)
        net.params[i] = old - h
        fm = functional(net, x, adj)
        net.params[i] = old
        fd = (fp - fm) / (2 * h)
        assert abs(fd - g[i]) <= 1e-6 * max(abs(fd), abs(g[i]), 1e-3 * scale)


def test_sum_of_values_gradient(rng):
    net = random_net(9)
    x = rng.uniform(-1, 1, 8)
    g = backward_params(net, x, [np.ones((8, 4))])
    h = 1e-6
    for i in rng.choice(net.params.size, 50, replace=False):
        old = net.params[i]
        net.params[i] = old + h
        fp = forward_jet(net, x).value.sum()
        net.params[i] = old - h
        fm = forward_jet(net, x).value.sum()
        net.params[i] = old
        fd = (fp - fm) / (2 * h)
        assert abs(fd - g[i]) <= 1e-6 * max(abs(fd), 1e-3 * np.max(np.abs(g)))


def test_gradient_linearity_and_zero(rng):
    net = random_net(2)
    x = rng.uniform(-1, 1, 10)
    a1 = [rng.standard_normal((10, 4)) for _ in range(3)]
    a2 = [rng.standard_normal((10, 4)) for _ in range(3)]
    jet = forward_jet(net, x, 2)
    g12 = backward_params(net, x, [u + v for u, v in zip(a1, a2)], jet)
    g1 = backward_params(net, x, a1, jet)
    g2 = backward_params(net, x, a2, jet)
    np.testing.assert_allclose(g12, g1 + g2, atol=1e-12 * np.max(np.abs(g12)))
    assert not backward_params(net, x, [np.zeros((10, 4))] * 3).any()
    assert not backward_params(net, x, [None, None]).any()


def test_tape_reuse_matches_fresh(rng):
    net = random_net(5)
    x = rng.uniform(-1, 1, 6)
    adj = [rng.standard_normal((6, 4)) for _ in range(2)]
    assert np.array_equal(backward_params(net, x, adj, forward_jet(net, x, 2)), backward_params(net, x, adj))


def test_errors():
    net = random_net(1)
    with pytest.raises(InvalidArgumentError):
        forward_jet(net, [0.0, np.nan])
    with pytest.raises(InvalidArgumentError):
        forward_jet(net, [0.0], 3)
    with pytest.raises(InvalidArgumentError):
        backward_params(net, [0.0, 0.5], [np.ones((3, 4))])
    with pytest.raises(InvalidArgumentError):
        NetArchitecture(activation="tanh")
    with pytest.raises(InvalidArgumentError):
        NetArchitecture(p=0)
    with pytest.raises(InvalidArgumentError):
        forward_jet(net, [0.0], 0)[1]
