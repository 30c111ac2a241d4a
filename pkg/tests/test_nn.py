import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mgnma.gradsuite import CASES, Fragment, run_suite
from mgnma.nn import (
    Adam, BatchNorm, Dense, Module, bce_loss, bce_with_logits, glorot_uniform, grad_check,
    sigmoid, softmax,
)


def test_sigmoid_values():
    assert sigmoid(np.array([0.0]))[0] == 0.5
    assert abs(sigmoid(np.array([math.log(3)]))[0] - 0.75) < 1e-12
    tiny = sigmoid(np.array([-40.0]))[0]
    assert 0.0 < tiny < 1e-17


def test_sigmoid_extremes_stay_finite():
    out = sigmoid(np.array([-1000.0, 1000.0]))
    assert np.all(np.isfinite(out))
    assert out[0] == 0.0 and out[1] == 1.0


def test_bce_analytic():
    loss, _ = bce_loss(np.array([[0.5]]), np.array([[1.0]]))
    assert abs(loss - math.log(2)) < 1e-12
    loss, _ = bce_loss(np.array([[0.9, 0.1]]), np.array([[1.0, 0.0]]))
    assert abs(loss - 0.105361) < 1e-6


def test_bce_plateau_at_half():
    p = np.full((3, 4), 0.5)
    loss, _ = bce_loss(p, p)
    assert abs(loss - math.log(2)) < 1e-12


def test_bce_gradient_matches_finite_differences(rng):
    p = rng.uniform(0.05, 0.95, (3, 4))
    y = rng.random((3, 4))
    _, grad = bce_loss(p, y)
    h = 1e-6
    num = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        q = p.copy()
        q[idx] += h
        up = bce_loss(q, y)[0]
        q[idx] -= 2 * h
        num[idx] = (up - bce_loss(q, y)[0]) / (2 * h)
    np.testing.assert_allclose(grad, num, rtol=1e-6, atol=1e-9)


def test_bce_clamped_region_has_zero_gradient():
    _, grad = bce_loss(np.array([[0.0, 1.0]]), np.array([[1.0, 0.0]]))
    assert not grad.any()


def test_bce_shape_mismatch():
    with pytest.raises(ValueError):
        bce_loss(np.zeros((2, 3)), np.zeros((3, 2)))


@given(arrays(np.float64, (4, 3), elements=st.floats(0, 1)), arrays(np.float64, (4, 3), elements=st.floats(0, 1)))
def test_bce_nonnegative(p, y):
    assert bce_loss(p, y)[0] >= 0.0


def test_bce_with_logits_gradient(rng):
    o = rng.standard_normal((5, 3))
    y = rng.random((5, 3))
    loss, p, do = bce_with_logits(o, y)
    np.testing.assert_allclose(do, (sigmoid(o) - y) / o.size)
    assert loss == bce_loss(p, y)[0]


def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.zeros((1, 4))), 0.25)
    np.testing.assert_allclose(softmax(np.array([[0.0, math.log(2)]])), [[1 / 3, 2 / 3]], atol=1e-12)


@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_sums_to_one_and_shift_invariant(z, c):
    s = softmax(z)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(softmax(z + c), s, atol=1e-6)


def test_batchnorm_train_statistics(rng):
    bn = BatchNorm(6).astype(np.float64)
    out = bn.forward(rng.standard_normal((64, 6)) * 3 + 2)
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-5)
    np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-5)


def test_batchnorm_eval_identity(rng):
    bn = BatchNorm(6).astype(np.float64).eval()
    x = rng.standard_normal((4, 6))
    np.testing.assert_allclose(bn.forward(x), x / np.sqrt(1 + bn.epsilon))


def test_batchnorm_running_stats_update(rng):
    bn = BatchNorm(3).astype(np.float64)
    x = rng.standard_normal((10, 3))
    bn.forward(x)
    np.testing.assert_allclose(bn.buffers["running_mean"], 0.01 * x.mean(axis=0))
    np.testing.assert_allclose(bn.buffers["running_var"], 0.99 + 0.01 * x.var(axis=0))


def test_batchnorm_needs_two_rows():
    with pytest.raises(ValueError):
        BatchNorm(3).forward(np.zeros((1, 3), dtype=np.float32))
    BatchNorm(3).eval().forward(np.zeros((1, 3), dtype=np.float32))


def test_glorot_bounds(rng):
    W = glorot_uniform(rng, 30, 50)
    assert W.shape == (30, 50)
    assert np.abs(W).max() <= math.sqrt(6 / 80)


def test_adam_zero_gradient_is_fixed_point():
    w = np.array([1.0, -2.0])
    opt = Adam()
    for _ in range(3):
        opt.step({"w": w}, {"w": np.zeros(2)})
    np.testing.assert_array_equal(w, [1.0, -2.0])


def test_adam_first_step():
    w = np.array([0.0])
    Adam(learning_rate=1e-4).step({"w": w}, {"w": np.array([1.0])})
    assert abs(w[0] + 1e-4) < 1e-9


def _adam_reference(w, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = 2 * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return w


def test_adam_matches_scalar_reference():
    w = np.array([1.0])
    opt = Adam(learning_rate=0.1)
    for _ in range(100):
        opt.step({"w": w}, {"w": 2 * w})
    ref = _adam_reference(1.0, 0.1, 100)
    assert abs(w[0] - ref) < 1e-12
    assert abs(w[0]) < 0.5


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        Adam().step({"w": np.zeros(2)}, {"w": np.zeros(3)})


def test_state_dict_round_trip(rng):
    a = Dense(4, 3, rng)
    b = Dense(4, 3, np.random.default_rng(99))
    b.load_state_dict(a.state_dict())
    x = rng.standard_normal((2, 4)).astype(np.float32)
    np.testing.assert_array_equal(a.forward(x), b.forward(x))
    with pytest.raises((KeyError, ValueError)):
        b.load_state_dict({"W": np.zeros((3, 4), np.float32)})


class _Identity(Module):
    def forward(self, x):
        return x

    def backward(self, dy):
        return dy


def test_grad_check_identity_is_exact(rng):
    m = _Identity()
    report = grad_check(Fragment(m, m.forward, m.backward), [rng.standard_normal((3, 4))])
    assert report.max_rel_error < 1e-9


def test_grad_check_catches_scaled_backward(rng):
    layer = Dense(4, 3, rng).astype(np.float64)
    frag = Fragment(layer, layer.forward, lambda dy: 2 * layer.backward(dy))
    report = grad_check(frag, [rng.standard_normal((2, 4))])
    assert not report.passed


@pytest.mark.parametrize("name", sorted(CASES))
def test_gradient_suite_case(name):
    report = run_suite(cases=[name])[name]
    assert report.passed, report.errors


def test_float32_gradients_within_loose_tolerance(rng):
    layer = Dense(5, 4, rng)
    x = rng.standard_normal((3, 5)).astype(np.float32)
    report = grad_check(Fragment(layer, layer.forward, layer.backward), [x], tolerance=1e-2, h=1e-2)
    assert report.passed, report.errors


def test_fixed_seed_gives_identical_init():
    a = Dense(7, 5, np.random.default_rng(11))
    b = Dense(7, 5, np.random.default_rng(11))
    assert a.params["W"].tobytes() == b.params["W"].tobytes()
