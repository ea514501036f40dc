import math

import numpy as np
import pytest

from marginlab.data import Dataset, gen_example2, gen_separable
from marginlab.model import (
    ModelKind,
    MultiNeuronNet,
    activation_pattern,
    grad,
    loss,
    net_forward,
    net_grad,
    net_loss,
    net_sample_grad,
    sample_grad,
)

KINDS = [ModelKind.relu(), ModelKind.leaky(0.3), ModelKind.linear()]


def fd_grad(fn, w, h=1e-6):
    """Central finite differences, coordinate by coordinate."""
    g = np.zeros_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        g[j] = (fn(w + e) - fn(w - e)) / (2 * h)
    return g


def random_kink_avoiding(rng, ds, min_gap=1e-3):
    """Weight vector whose products stay away from the activation kinks."""
    while True:
        w = rng.standard_normal(ds.dim)
        if np.all(np.abs(ds.points @ w) > min_gap):
            return w


class TestLoss:
    def test_zero_weight_is_one(self):
        ds = gen_separable(3, 2, 3, 0.2, 0)
        le = loss(np.zeros(3), ds, ModelKind.relu())
        assert le.value == 1.0
        assert not le.overflow

    def test_all_inactive_relu_is_one(self):
        # loss = L* + n+/n = 1 exactly when no sample activates
        pts = np.array([[1.0, 0.1], [0.8, -0.1], [0.9, 0.05]])
        ds = Dataset(pts, np.array([1, 1, -1]))
        w = -pts.sum(axis=0)
        assert np.all(ds.points @ w < 0)
        assert loss(w, ds, ModelKind.relu()).value == 1.0

    def test_example2_closed_form(self):
        ds = gen_example2()
        w = np.array([1.0, 0.05])  # both products positive
        u1, u2 = ds.points @ w
        assert u1 > 0 and u2 > 0
        expected = (math.exp(-u1) + math.exp(u2)) / 2.0
        assert loss(w, ds, ModelKind.relu()).value == pytest.approx(
            expected, rel=1e-15
        )

    def test_dimension_mismatch(self):
        ds = gen_example2()
        with pytest.raises(ValueError):
            loss(np.zeros(3), ds, ModelKind.relu())

    def test_overflow_flag(self):
        ds = gen_example2()
        w = 1e4 * ds.points[1]  # enormous misclassified negative product
        le = loss(w, ds, ModelKind.relu())
        assert le.overflow
        assert math.isfinite(le.value)

    def test_correct_terms_at_most_one(self):
        # term-wise l_i <= 1 whenever y_i * act(w.x_i) >= 0
        rng = np.random.default_rng(2)
        ds = gen_separable(5, 5, 3, 0.1, 12)
        for kind in KINDS:
            for _ in range(20):
                w = rng.standard_normal(3)
                margins = ds.labels * kind.activation(ds.points @ w)
                terms = np.exp(-margins)
                assert np.all(terms[margins >= 0] <= 1.0)


class TestGrad:
    def test_all_inactive_relu_gradient_zero(self):
        pts = np.array([[1.0, 0.1], [0.8, -0.1], [0.9, 0.05]])
        ds = Dataset(pts, np.array([1, 1, -1]))
        w = -pts.sum(axis=0)
        assert np.array_equal(grad(w, ds, ModelKind.relu()), np.zeros(2))

    def test_single_sample_hand_value(self):
        ds = Dataset(np.array([[2.0, 0.0], [-2.0, 0.0]]), np.array([1, -1]))
        w = np.array([1.0, 0.0])
        # only the positive sample is active: -(1/2) e^{-2} (2,0)
        expected = -0.5 * math.exp(-2.0) * np.array([2.0, 0.0])
        assert np.allclose(grad(w, ds, ModelKind.relu()), expected, rtol=1e-15)

    @pytest.mark.parametrize("kind", KINDS, ids=lambda k: k.name)
    def test_finite_difference_agreement(self, kind):
        rng = np.random.default_rng(7)
        for trial in range(40):
            ds = gen_separable(4, 3, 3, 0.1, trial)
            w = random_kink_avoiding(rng, ds)
            g = grad(w, ds, kind)
            fd = fd_grad(lambda v: loss(v, ds, kind).value, w)
            denom = max(np.linalg.norm(g), 1e-12)
            assert np.linalg.norm(g - fd) / denom < 1e-6


class TestSampleGrad:
    def test_misclassified_negative_hand_value(self):
        x, y = np.array([1.0, 1.0]), -1
        w = np.array([2.0, 0.0])  # w.x = 2 > 0, misclassified
        expected = math.exp(2.0) * x
        assert np.allclose(sample_grad(w, (x, y), ModelKind.relu()), expected,
                           rtol=1e-15)

    def test_inactive_sample_zero(self):
        x, y = np.array([1.0, 0.0]), 1
        w = np.array([-1.0, 0.0])
        assert np.array_equal(
            sample_grad(w, (x, y), ModelKind.relu()), np.zeros(2)
        )

    @pytest.mark.parametrize("kind", KINDS, ids=lambda k: k.name)
    def test_mean_equals_grad_exactly(self, kind):
        rng = np.random.default_rng(9)
        ds = gen_separable(5, 4, 3, 0.1, 5)
        for _ in range(10):
            w = rng.standard_normal(3)
            acc = np.zeros(3)
            for i in range(ds.n):
                acc += sample_grad(w, (ds.points[i], int(ds.labels[i])), kind)
            assert np.array_equal(acc / ds.n, grad(w, ds, kind))


class TestKindConsistency:
    def test_interpolation_between_relu_and_linear(self):
        rng = np.random.default_rng(4)
        ds = gen_separable(4, 4, 3, 0.1, 8)
        for _ in range(10):
            w = rng.standard_normal(3)
            relu_terms = np.exp(-ds.labels * ModelKind.relu().activation(ds.points @ w))
            lin_terms = np.exp(-ds.labels * ModelKind.linear().activation(ds.points @ w))
            prev = None
            for lam in (1e-6, 0.5, 1 - 1e-6):
                terms = np.exp(
                    -ds.labels * ModelKind.leaky(lam).activation(ds.points @ w)
                )
                lo = np.minimum(relu_terms, lin_terms)
                hi = np.maximum(relu_terms, lin_terms)
                assert np.all(terms >= lo - 1e-12) and np.all(terms <= hi + 1e-12)
                if prev is not None:
                    # each term moves monotonically from the ReLU value to the
                    # linear value as the slope rises
                    move = np.sign(lin_terms - relu_terms)
                    assert np.all(move * (terms - prev) >= -1e-12)
                prev = terms
            assert np.allclose(
                np.exp(-ds.labels * ModelKind.leaky(1e-6).activation(ds.points @ w)),
                relu_terms, atol=1e-4)
            assert np.allclose(
                np.exp(-ds.labels * ModelKind.leaky(1 - 1e-6).activation(ds.points @ w)),
                lin_terms, atol=1e-4)

    def test_leaky_slope_domain(self):
        with pytest.raises(ValueError):
            ModelKind.leaky(0.0)
        with pytest.raises(ValueError):
            ModelKind.leaky(1.0)


def small_net(rng, d=3, K=3):
    W = rng.standard_normal((d, K))
    v = rng.standard_normal(K)
    v[v == 0] = 1.0
    v[0] = abs(v[0]) + 0.1
    v[1] = -abs(v[1]) - 0.1
    return MultiNeuronNet(W, v)


class TestNetForward:
    def test_zero_input(self):
        net = small_net(np.random.default_rng(0))
        assert net_forward(net, np.zeros(3)) == 0.0

    def test_cancellation(self):
        W = np.array([[1.0, 1.0], [0.5, 0.5]])
        net = MultiNeuronNet(W, np.array([1.0, -1.0]))
        rng = np.random.default_rng(1)
        for _ in range(10):
            assert net_forward(net, rng.standard_normal(2)) == 0.0

    def test_naive_loop_oracle(self):
        rng = np.random.default_rng(2)
        net = small_net(rng)
        for _ in range(20):
            x = rng.standard_normal(3)
            expected = sum(
                net.v[k] * max(float(net.W[:, k] @ x), 0.0)
                for k in range(net.K)
            )
            assert net_forward(net, x) == pytest.approx(expected, rel=1e-15)

    def test_validation(self):
        with pytest.raises(ValueError):
            MultiNeuronNet(np.ones((3, 2)), np.array([1.0, 0.0]))
        with pytest.raises(ValueError):
            MultiNeuronNet(np.ones((3, 2)), np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            MultiNeuronNet(np.ones((3, 1)), np.array([1.0]))


class TestNetLossGrad:
    def test_all_inactive(self):
        ds = Dataset(np.array([[1.0, 0.0], [0.5, 0.2]]), np.array([1, -1]))
        W = -np.array([[1.0, 1.0], [0.3, 0.4]])  # every product negative
        net = MultiNeuronNet(W, np.array([1.0, -1.0]))
        assert np.all(ds.points @ net.W < 0)
        assert net_loss(net, ds).value == 1.0
        assert np.array_equal(net_grad(net, ds), np.zeros((2, 2)))

    def test_shared_activation_columns_proportional(self):
        # both neurons active on every sample: grad columns scale like v
        rng = np.random.default_rng(5)
        ds = gen_separable(3, 3, 3, 0.2, 3)
        base = rng.standard_normal(3)
        base /= np.linalg.norm(base)
        W = np.stack([2.0 * base, 0.5 * base], axis=1)
        active = ds.points @ W > 0
        keep = active[:, 0] & active[:, 1]
        pts = np.vstack([ds.points[keep], -ds.points[keep]])
        labs = np.concatenate([ds.labels[keep], -ds.labels[keep]])
        # rebuild a dataset where both neurons share the activation set
        ds2 = Dataset(pts, labs)
        net = MultiNeuronNet(W, np.array([1.5, -0.5]))
        G = net_grad(net, ds2)
        ratio = net.v[0] / net.v[1]
        assert np.allclose(G[:, 0], ratio * G[:, 1], rtol=1e-12, atol=1e-15)

    def test_finite_difference_agreement(self):
        rng = np.random.default_rng(6)
        for trial in range(20):
            ds = gen_separable(4, 3, 3, 0.1, 100 + trial)
            net = small_net(rng)
            if np.any(np.abs(ds.points @ net.W) < 1e-3):
                continue  # kink avoidance
            G = net_grad(net, ds)

            def f(vec):
                return net_loss(net.with_weights(vec.reshape(3, 3)), ds).value

            fd = fd_grad(f, net.W.flatten()).reshape(3, 3)
            denom = max(np.linalg.norm(G), 1e-12)
            assert np.linalg.norm(G - fd) / denom < 1e-6

    def test_mean_of_sample_grads_exact(self):
        rng = np.random.default_rng(8)
        ds = gen_separable(4, 4, 3, 0.1, 9)
        net = small_net(rng)
        acc = np.zeros_like(net.W)
        for i in range(ds.n):
            acc += net_sample_grad(net, (ds.points[i], int(ds.labels[i])))
        assert np.array_equal(acc / ds.n, net_grad(net, ds))


class TestActivationPattern:
    def test_zero_input_all_zero(self):
        net = small_net(np.random.default_rng(3))
        assert activation_pattern(net, np.zeros(3)).tolist() == [0, 0, 0]

    def test_identity_columns(self):
        net = MultiNeuronNet(np.eye(2), np.array([1.0, -1.0]))
        assert activation_pattern(net, np.array([1.0, -1.0])).tolist() == [1, 0]

    def test_naive_loop_oracle(self):
        rng = np.random.default_rng(10)
        net = small_net(rng)
        for _ in range(20):
            x = rng.standard_normal(3)
            expected = [
                1 if float(net.W[:, k] @ x) > 0 else 0 for k in range(net.K)
            ]
            assert activation_pattern(net, x).tolist() == expected
