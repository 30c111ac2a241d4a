import math

import numpy as np
import pytest

from mgnma.fusion import ModalFusion


def _fusion(dims=(4, 3), p=0.0, attention=True, seed=0):
    return ModalFusion(dims, 5, np.random.default_rng(seed), modal_dropout_p=p,
                       attention=attention).astype(np.float64)


def test_equal_scores_give_equal_weights(rng):
    f = _fusion()
    for k in f.params:
        if k.startswith("w."):
            f.params[k][:] = 0.0
    out = f.forward_batch([rng.standard_normal((3, 4)), rng.standard_normal((3, 3))])
    np.testing.assert_allclose(out.alpha, 0.5)


def test_analytic_three_way_weights():
    f = _fusion(dims=(1, 1, 1))
    for name in f.names:
        f.params[f"w.{name}"][:] = 1.0
    vs = [np.array([[0.0]]), np.array([[math.log(2)]]), np.array([[math.log(3)]])]
    alpha = f.forward_batch(vs).alpha
    np.testing.assert_allclose(alpha, [[1 / 6, 2 / 6, 3 / 6]], atol=1e-12)


def test_dropped_modality_segment_is_exact_zero(rng):
    f = _fusion(p=0.5).train()
    vs = [rng.standard_normal((200, 4)) + 3, rng.standard_normal((200, 3)) + 3]
    seen = {}
    real = f.proj.forward
    f.proj.forward = lambda u: seen.setdefault("u", u) if False else (seen.__setitem__("u", u) or real(u))
    out = f.forward_batch(vs, np.random.default_rng(5))
    u = seen["u"]
    assert out.dropout_mask.any()
    for i, (lo, hi) in enumerate(zip(f.offsets[:-1], f.offsets[1:])):
        rows = out.dropout_mask[:, i]
        assert np.all(u[rows, lo:hi] == 0.0)
        assert np.all(u[~rows, lo:hi] != 0.0)


def test_dropped_modality_ignores_its_weight(rng):
    f = _fusion()
    vs = [np.zeros((2, 4)), rng.standard_normal((2, 3))]
    a = f.forward(vs)
    f.params["w.m0"][:] = rng.standard_normal(4) * 10
    np.testing.assert_array_equal(f.forward(vs), a)


def test_eval_mode_is_deterministic_and_dropout_free(rng):
    f = _fusion(p=0.9).eval()
    vs = [rng.standard_normal((8, 4)), rng.standard_normal((8, 3))]
    a = f.forward_batch(vs)
    b = f.forward_batch(vs)
    assert not a.dropout_mask.any()
    np.testing.assert_array_equal(a.V, b.V)


def test_zero_dropout_train_equals_eval(rng):
    f = _fusion(p=0.0)
    vs = [rng.standard_normal((8, 4)), rng.standard_normal((8, 3))]
    a = f.train().forward(vs)
    b = f.eval().forward(vs)
    assert a.tobytes() == b.tobytes()


def test_train_dropout_requires_rng(rng):
    f = _fusion(p=0.25).train()
    with pytest.raises(ValueError):
        f.forward([rng.standard_normal((2, 4)), rng.standard_normal((2, 3))])


def test_dropout_mask_reproducible(rng):
    f = _fusion(p=0.3).train()
    vs = [rng.standard_normal((50, 4)), rng.standard_normal((50, 3))]
    a = f.forward_batch(vs, np.random.default_rng(1))
    b = f.forward_batch(vs, np.random.default_rng(1))
    np.testing.assert_array_equal(a.dropout_mask, b.dropout_mask)
    assert a.V.tobytes() == b.V.tobytes()


def test_dim_mismatch(rng):
    f = _fusion()
    with pytest.raises(ValueError):
        f.forward([rng.standard_normal((2, 4)), rng.standard_normal((2, 4))])
    with pytest.raises(ValueError):
        f.forward([rng.standard_normal((2, 4))])


def test_concat_mode_has_unit_weights(rng):
    f = _fusion(attention=False)
    out = f.forward_batch([rng.standard_normal((3, 4)), rng.standard_normal((3, 3))])
    np.testing.assert_array_equal(out.alpha, 1.0)
    assert not any(k.startswith("w.") for k in f.params)
