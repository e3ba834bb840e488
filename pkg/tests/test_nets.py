import math

import numpy as np
import pytest

from planarmimic.nets import (ACTIVATIONS, Grads, MlpNet, OptimizerState,
                              net_from_dict, net_to_dict, optimizer_from_dict,
                              optimizer_step, optimizer_to_dict,
                              orthogonal_init)

FD_EPS = 1e-5
FD_RTOL = 1e-4


def rand_net(rng, sizes=None, activation="elu"):
    sizes = sizes or [5, 8, 6, 1]
    net = MlpNet.create(sizes, activation=activation, rng=rng)
    # break the orthogonal structure so tests see generic parameters
    for w in net.weights:
        w += 0.3 * rng.standard_normal(w.shape)
    for b in net.biases:
        b += 0.3 * rng.standard_normal(b.shape)
    return net


def fd_param_gradient(fn, net, eps=FD_EPS):
    """Central finite differences of a scalar function of the parameters."""
    flat = net.params_flat()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        bump = flat.copy()
        bump[i] += eps
        net.set_params_flat(bump)
        hi = fn()
        bump[i] -= 2 * eps
        net.set_params_flat(bump)
        lo = fn()
        grad[i] = (hi - lo) / (2 * eps)
    net.set_params_flat(flat)
    return grad


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


class TestForward:
    def test_zero_weight_net_outputs_bias(self):
        net = MlpNet.create([3, 4, 2], rng=np.random.default_rng(0))
        for w in net.weights:
            w[...] = 0.0
        net.biases[-1][...] = [1.5, -2.5]
        y, _ = net.forward(np.random.default_rng(1).normal(size=(7, 3)))
        assert np.allclose(y, np.tile([1.5, -2.5], (7, 1)))

    def test_identity_single_layer(self):
        net = MlpNet([4, 4], activation="identity",
                     weights=[np.eye(4)], biases=[np.zeros(4)])
        x = np.random.default_rng(2).normal(size=4)
        y, _ = net.forward(x)
        assert np.allclose(y, x)

    @pytest.mark.parametrize("activation", ["elu", "relu"])
    def test_matches_straight_line_oracle(self, activation):
        # independent re-implementation: plain loops over rows and layers
        rng = np.random.default_rng(11)
        net = rand_net(rng, [4, 6, 5, 2], activation)
        x = rng.normal(size=(3, 4))
        y, _ = net.forward(x)

        def act(v):
            if activation == "relu":
                return max(v, 0.0)
            return v if v > 0 else math.expm1(v)

        for b in range(3):
            a = list(x[b])
            for l in range(net.num_layers):
                z = []
                for j in range(net.layer_sizes[l + 1]):
                    s = net.biases[l][j]
                    for i in range(net.layer_sizes[l]):
                        s += net.weights[l][j, i] * a[i]
                    z.append(s)
                a = [act(v) for v in z] if l < net.num_layers - 1 else z
            assert np.allclose(y[b], a, atol=1e-12)

    def test_shape_mismatch(self):
        net = MlpNet.create([3, 2], rng=np.random.default_rng(0))
        with pytest.raises(ValueError, match="features"):
            net.forward(np.zeros(4))

    def test_forward_is_pure(self):
        rng = np.random.default_rng(5)
        net = rand_net(rng)
        x = rng.normal(size=(2, 5))
        y1, _ = net.forward(x)
        y2, _ = net.forward(x)
        assert np.array_equal(y1, y2)


class TestBackward:
    def test_linear_net_weight_grad_is_input(self):
        net = MlpNet([3, 1], activation="identity",
                     weights=[np.zeros((1, 3))], biases=[np.zeros(1)])
        x = np.array([1.0, 2.0, 3.0])
        _, cache = net.forward(x)
        grads = net.backward(cache, np.ones((1, 1)))
        assert np.allclose(grads.d_weights[0], x[None, :])
        assert np.allclose(grads.d_biases[0], 1.0)

    def test_zero_output_grad(self):
        rng = np.random.default_rng(1)
        net = rand_net(rng)
        x = rng.normal(size=(4, 5))
        _, cache = net.forward(x)
        grads = net.backward(cache, np.zeros((4, 1)))
        assert all(np.all(g == 0) for g in grads.d_weights)
        assert all(np.all(g == 0) for g in grads.d_biases)
        assert np.all(grads.d_input == 0)

    @pytest.mark.parametrize("activation", ["elu", "relu", "identity"])
    def test_param_gradients_match_finite_differences(self, activation):
        failures = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            sizes = [rng.integers(2, 6), rng.integers(2, 8), rng.integers(1, 6)]
            net = rand_net(rng, list(sizes), activation)
            x = rng.normal(size=(3, sizes[0]))
            dy = rng.normal(size=(3, sizes[-1]))
            _, cache = net.forward(x)
            analytic = net.backward(cache, dy).flat()

            def scalar():
                y, _ = net.forward(x)
                return float((y * dy).sum())

            fd = fd_param_gradient(scalar, net)
            if rel_err(analytic, fd) >= FD_RTOL:
                failures += 1
        assert failures == 0

    def test_input_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(77)
        net = rand_net(rng, [4, 7, 1], "elu")
        x = rng.normal(size=(1, 4))
        dy = np.ones((1, 1))
        _, cache = net.forward(x)
        analytic = net.backward(cache, dy).d_input[0]
        fd = np.zeros(4)
        for i in range(4):
            hi = x.copy(); hi[0, i] += FD_EPS
            lo = x.copy(); lo[0, i] -= FD_EPS
            fd[i] = (net.forward(hi)[0].sum() - net.forward(lo)[0].sum()) / (2 * FD_EPS)
        assert rel_err(analytic, fd) < FD_RTOL


class TestEluSmoothness:
    def test_c1_at_zero(self):
        _, delu, _ = ACTIVATIONS["elu"]
        h = 1e-7
        elu = ACTIVATIONS["elu"][0]
        left = (elu(np.array([0.0])) - elu(np.array([-h]))) / h
        right = (elu(np.array([h])) - elu(np.array([0.0]))) / h
        assert abs(float(left - right)) < 1e-6
        assert delu(np.array([0.0]))[0] == pytest.approx(1.0)


class TestOptimizers:
    def test_sgd_step(self):
        p = [np.array([1.0, 2.0])]
        g = [np.array([10.0, -10.0])]
        opt = OptimizerState.for_params(p, "sgd", learning_rate=0.1)
        optimizer_step(opt, p, g)
        assert np.allclose(p[0], [0.0, 3.0])

    def test_weight_decay_as_l2_gradient(self):
        p = [np.array([1.0, -4.0])]
        opt = OptimizerState.for_params(p, "sgd", learning_rate=1.0,
                                        weight_decay=0.001)
        optimizer_step(opt, p, [np.zeros(2)])
        assert np.allclose(p[0], [0.999, -3.996])

    def test_rmsprop_unit_normalized_fixed_point(self):
        # constant gradient: accumulator -> g^2, step magnitude -> lr
        p = [np.array([0.0])]
        g = [np.array([3.7])]
        opt = OptimizerState.for_params(p, "rmsprop", learning_rate=0.01, rho=0.9)
        prev = p[0].copy()
        for _ in range(2000):
            prev = p[0].copy()
            optimizer_step(opt, p, g)
        assert abs(abs(float(p[0][0] - prev[0])) - 0.01) < 1e-6

    def test_adam_moves_against_gradient(self):
        p = [np.array([0.0, 0.0])]
        opt = OptimizerState.for_params(p, "adam", learning_rate=0.1)
        for _ in range(10):
            optimizer_step(opt, p, [np.array([1.0, -1.0])])
        assert p[0][0] < 0 < p[0][1]

    def test_non_finite_gradient_rejected(self):
        p = [np.array([1.0])]
        opt = OptimizerState.for_params(p, "sgd", learning_rate=0.1)
        with pytest.raises(ValueError, match="non-finite"):
            optimizer_step(opt, p, [np.array([np.nan])])
        assert p[0][0] == 1.0  # untouched

    def test_serialization_round_trip(self):
        p = [np.array([1.0, 2.0]), np.array([[3.0]])]
        opt = OptimizerState.for_params(p, "adam", learning_rate=0.01)
        optimizer_step(opt, p, [np.ones(2), np.ones((1, 1))])
        restored = optimizer_from_dict(optimizer_to_dict(opt))
        assert restored.step_count == opt.step_count
        for a, b in zip(restored.slots, opt.slots):
            for k in a:
                assert np.array_equal(a[k], b[k])


class TestInit:
    def test_orthogonal_columns(self):
        rng = np.random.default_rng(0)
        w = orthogonal_init(8, 8, 1.0, rng)
        assert np.allclose(w @ w.T, np.eye(8), atol=1e-10)

    def test_gain_scaling(self):
        rng = np.random.default_rng(0)
        w = orthogonal_init(6, 6, 2.0, rng)
        assert np.allclose(w @ w.T, 4 * np.eye(6), atol=1e-10)

    def test_param_count_matches_formula(self):
        net = MlpNet.create([7, 11, 3], rng=np.random.default_rng(0))
        assert net.num_params() == (7 + 1) * 11 + (11 + 1) * 3
        assert net.params_flat().size == net.num_params()

    def test_deterministic_given_seed(self):
        a = MlpNet.create([4, 5, 2], rng=np.random.default_rng(9))
        b = MlpNet.create([4, 5, 2], rng=np.random.default_rng(9))
        assert np.array_equal(a.params_flat(), b.params_flat())


class TestSerialization:
    def test_net_round_trip(self):
        rng = np.random.default_rng(4)
        net = rand_net(rng, [3, 5, 2], "relu")
        restored = net_from_dict(net_to_dict(net))
        assert restored.layer_sizes == net.layer_sizes
        assert restored.activation == net.activation
        assert np.array_equal(restored.params_flat(), net.params_flat())
