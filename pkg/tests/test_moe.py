import numpy as np
import pytest

from mgnma.moe import MoE
from mgnma.nn import sigmoid


def _moe(n_experts, seed=0, dim=6, hidden=4):
    return MoE(dim, np.random.default_rng(seed), n_experts=n_experts, hidden=hidden,
               n_classes=5).astype(np.float64)


def test_identical_experts_match_single_expert(rng):
    moe = _moe(3)
    src = moe.experts[0].state_dict()
    for ex in moe.experts[1:]:
        ex.load_state_dict(src)
    single = _moe(1)
    single.experts[0].load_state_dict(src)
    moe.eval()
    single.eval()
    V = rng.standard_normal((7, 6))
    np.testing.assert_allclose(moe.forward(V), single.forward(V), atol=1e-12)


def test_single_expert_is_plain_mlp(rng):
    moe = _moe(1).eval()
    assert moe.gate is None
    V = rng.standard_normal((4, 6))
    np.testing.assert_array_equal(moe.forward(V), sigmoid(moe.experts[0].forward(V)))


def test_gate_rows_sum_to_one(rng):
    moe = _moe(3)
    g = moe.gate_weights(rng.standard_normal((20, 6)))
    np.testing.assert_allclose(g.sum(axis=1), 1.0, atol=1e-12)


def test_expert_permutation_invariance(rng):
    moe = _moe(3).eval()
    V = rng.standard_normal((9, 6))
    before = moe.forward(V)
    perm = [2, 0, 1]
    states = [moe.experts[e].state_dict() for e in perm]
    for ex, st in zip(moe.experts, states):
        ex.load_state_dict(st)
    moe.gate.params["W"][:] = moe.gate.params["W"][perm]
    moe.gate.params["b"][:] = moe.gate.params["b"][perm]
    np.testing.assert_allclose(moe.forward(V), before, atol=1e-12)


def test_outputs_strictly_inside_unit_interval(rng):
    moe = _moe(2).eval()
    p = moe.forward(rng.standard_normal((50, 6)) * 3)
    assert np.all((p > 0) & (p < 1))


def test_shape_mismatch(rng):
    with pytest.raises(ValueError):
        _moe(2).forward(rng.standard_normal((3, 5)))


def test_needs_an_expert():
    with pytest.raises(ValueError):
        _moe(0)
