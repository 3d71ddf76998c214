import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from phaseat import nn
from phaseat.errors import ShapeError, StateError
from phaseat.nn import Layer, ParameterSet

from oracles import central_difference, direct_softmax, loop_forward, max_relative_error


def single_layer(W, b, act):
    return ParameterSet((Layer(np.asarray(W, float), np.asarray(b, float), act),))


def test_identity_layer():
    p = single_layer(np.eye(2), [0, 0], "identity")
    out, _ = nn.forward(p, [1.0, 2.0])
    assert out.tolist() == [1.0, 2.0]


def test_relu_clamps_negative_preactivation():
    p = single_layer(np.eye(2), [-1.5, 0], "relu")
    out, _ = nn.forward(p, [1.0, 2.0])
    assert out.tolist() == [0.0, 2.0]


def test_forward_matches_loop_reevaluation():
    rng = np.random.default_rng(3)
    p = nn.init_params([4, 5, 3], "tanh", rng)
    p = ParameterSet(tuple(Layer(l.weight, rng.normal(size=l.bias.shape), l.activation) for l in p.layers))
    x = rng.normal(size=4)
    out, _ = nn.forward(p, x)
    ref = loop_forward([(l.weight.tolist(), l.bias.tolist(), l.activation) for l in p.layers], x)
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-14)


def test_forward_shape_error():
    p = nn.init_params([3, 2], "tanh", np.random.default_rng(0))
    with pytest.raises(ShapeError):
        nn.forward(p, np.zeros(4))


def test_layer_dimensions_must_chain():
    a = Layer(np.zeros((3, 2)), np.zeros(3))
    b = Layer(np.zeros((1, 4)), np.zeros(1))
    with pytest.raises(ShapeError):
        ParameterSet((a, b))


def test_linear_chain_rule():
    W = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.0]])
    p = single_layer(W, np.zeros(3), "identity")
    x = np.array([0.3, -0.7])
    g = np.array([1.0, -2.0, 0.5])
    _, tr = nn.forward(p, x)
    grads, gx = nn.backward(p, tr, g)
    np.testing.assert_allclose(grads.weights[0], np.outer(g, x))
    np.testing.assert_allclose(gx, W.T @ g)


def test_zero_grad_output_gives_zero_gradients():
    rng = np.random.default_rng(1)
    p = nn.init_params([3, 4, 2], "tanh", rng)
    _, tr = nn.forward(p, rng.normal(size=(5, 3)))
    grads, gx = nn.backward(p, tr, np.zeros((5, 2)))
    assert not np.any(grads.to_vector())
    assert not np.any(gx)


def test_backward_rejects_foreign_trace():
    rng = np.random.default_rng(1)
    p = nn.init_params([3, 2], "tanh", rng)
    q = nn.init_params([3, 2], "tanh", rng)
    _, tr = nn.forward(p, np.ones(3))
    with pytest.raises(StateError):
        nn.backward(q, tr, np.ones(2))


def _away_from_kinks(p, x, tol=1e-3):
    _, tr = nn.forward(p, x)
    return all(np.all(np.abs(pre) >= tol) for pre, l in zip(tr.pre, p.layers) if l.activation == "relu")


@pytest.mark.parametrize(
    "act,depth", list(itertools.product(["relu", "tanh"], [1, 2, 3]))
)
def test_gradients_match_finite_differences(act, depth):
    rng = np.random.default_rng(10 * depth + len(act))
    sizes = [3] + [5] * (depth - 1) + [4]
    acts = [act] * (depth - 1) + ["identity"] if depth > 1 else [act]
    p = nn.init_params(sizes, acts, rng)
    p = p.from_vector(p.to_vector() + 0.1 * rng.normal(size=p.size))
    x = rng.normal(size=(6, 3))
    while not _away_from_kinks(p, x):
        x = rng.normal(size=(6, 3))
    y = rng.integers(0, 4, size=6)

    def loss_of(vec):
        out, _ = nn.forward(p.from_vector(vec), x)
        return nn.cross_entropy(out, y)[0]

    out, tr = nn.forward(p, x)
    _, g = nn.cross_entropy(out, y)
    grads, gx = nn.backward(p, tr, g)
    assert max_relative_error(grads.to_vector(), central_difference(loss_of, p.to_vector())) < 1e-4

    def loss_x(xv):
        return nn.cross_entropy(nn.forward(p, xv.reshape(x.shape))[0], y)[0]

    assert max_relative_error(gx, central_difference(loss_x, x.ravel()).reshape(x.shape)) < 1e-4


def test_determinism_bitwise():
    def run():
        rng = np.random.default_rng(42)
        p = nn.init_params([3, 8, 2], "tanh", rng)
        x = rng.normal(size=(4, 3))
        out, tr = nn.forward(p, x)
        grads, gx = nn.backward(p, tr, np.ones_like(out))
        return out, grads.to_vector(), gx

    a, b = run(), run()
    for u, v in zip(a, b):
        assert np.array_equal(u, v)


def test_glorot_init_bounds():
    p = nn.init_params([10, 6], "tanh", np.random.default_rng(0))
    assert np.abs(p.layers[0].weight).max() <= math.sqrt(6 / 16)
    assert not np.any(p.layers[0].bias)


class TestSoftmax:
    def test_symmetric(self):
        assert nn.softmax([0.0, 0.0]).tolist() == [0.5, 0.5]

    def test_no_overflow(self):
        s = nn.softmax([1000.0, 0.0])
        assert s[0] == pytest.approx(1.0) and s[1] == pytest.approx(0.0, abs=1e-300)

    def test_matches_direct_evaluation(self):
        np.testing.assert_allclose(nn.softmax([1.0, 2.0, 3.0]), direct_softmax([1, 2, 3]), rtol=1e-14)

    def test_empty(self):
        with pytest.raises(ShapeError):
            nn.softmax([])

    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-1e4, 1e4)))
    def test_probability_vector(self, z):
        s = nn.softmax(z)
        assert np.all(s >= 0)
        assert abs(s.sum() - 1.0) <= 1e-12


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss, _ = nn.cross_entropy([0.0, 0.0], 0)
        assert loss == pytest.approx(math.log(2), abs=1e-15)

    def test_confident(self):
        loss, _ = nn.cross_entropy([50.0, 0.0, 0.0], 0)
        assert loss == pytest.approx(0.0, abs=1e-20)

    def test_out_of_range_label(self):
        with pytest.raises(IndexError):
            nn.cross_entropy([0.0, 1.0], 2)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        z = rng.normal(size=5)
        _, g = nn.cross_entropy(z, 3)
        num = central_difference(lambda v: nn.cross_entropy(v, 3)[0], z)
        assert max_relative_error(g, num) < 1e-6

    def test_gradient_is_softmax_minus_onehot(self):
        z = np.array([0.2, -1.0, 0.7])
        _, g = nn.cross_entropy(z, 1)
        np.testing.assert_allclose(g, nn.softmax(z) - np.eye(3)[1])


class TestSGD:
    def test_zero_lr(self):
        rng = np.random.default_rng(0)
        p = nn.init_params([2, 3], "tanh", rng)
        g = nn.GradientSet((np.ones((3, 2)),), (np.ones(3),))
        assert np.array_equal(nn.sgd_step(p, g, 0.0).to_vector(), p.to_vector())

    def test_scalar(self):
        p = single_layer([[1.0]], [0.0], "identity")
        g = nn.GradientSet((np.array([[0.5]]),), (np.zeros(1),))
        assert nn.sgd_step(p, g, 0.1).layers[0].weight[0, 0] == pytest.approx(0.95)

    def test_shape_mismatch(self):
        p = single_layer([[1.0]], [0.0], "identity")
        g = nn.GradientSet((np.ones((2, 1)),), (np.zeros(2),))
        with pytest.raises(ShapeError):
            nn.sgd_step(p, g, 0.1)

    def test_small_step_decreases_loss(self):
        rng = np.random.default_rng(7)
        p = nn.init_params([3, 8, 3], ["tanh", "identity"], rng)
        x = rng.normal(size=(16, 3))
        y = rng.integers(0, 3, size=16)
        out, tr = nn.forward(p, x)
        before, g = nn.cross_entropy(out, y)
        grads, _ = nn.backward(p, tr, g)
        after, _ = nn.cross_entropy(nn.forward(nn.sgd_step(p, grads, 1e-2), x)[0], y)
        assert after < before
