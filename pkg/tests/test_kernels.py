import os
import subprocess
import sys

import numpy as np
import pytest

from mgnma import kernels

needs_numba = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")


@needs_numba
def test_pearson_paths_agree(rng):
    x = rng.standard_normal((50, 15))
    y = rng.standard_normal((50, 15))
    x[:, 3] = 1.0
    ra, da = kernels.pearson_columns_numpy(x, y)
    rb, db = kernels.pearson_columns_numba(x, y)
    np.testing.assert_allclose(ra, rb, atol=1e-12)
    np.testing.assert_array_equal(da, db)
    assert da[3] and ra[3] == 0.0


@needs_numba
def test_softmax_paths_agree(rng):
    z = rng.standard_normal((2, 7, 5)) * 10
    np.testing.assert_allclose(kernels.softmax_rows_numpy(z), kernels.softmax_rows_numba(z), atol=1e-12)


@needs_numba
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_vlad_paths_agree(rng, dtype):
    a = kernels.softmax_rows_numpy(rng.standard_normal((3, 6, 4))).astype(dtype)
    x = rng.standard_normal((3, 6, 5)).astype(dtype)
    c = rng.standard_normal((4, 5)).astype(dtype)
    va = kernels.vlad_aggregate_numpy(a, x, c)
    vb = kernels.vlad_aggregate_numba(a, x, c)
    assert va.dtype == vb.dtype == dtype
    np.testing.assert_allclose(va, vb, rtol=1e-5, atol=1e-6)
    dv = rng.standard_normal(va.shape).astype(dtype)
    for ga, gb in zip(kernels.vlad_aggregate_backward_numpy(a, x, c, dv),
                      kernels.vlad_aggregate_backward_numba(a, x, c, dv)):
        np.testing.assert_allclose(ga, gb, rtol=1e-5, atol=1e-5)


def test_vlad_matches_direct_sum(rng):
    a = kernels.softmax_rows_numpy(rng.standard_normal((1, 4, 2)))
    x = rng.standard_normal((1, 4, 3))
    c = rng.standard_normal((2, 3))
    want = np.array([[sum(a[0, t, k] * (x[0, t] - c[k]) for t in range(4)) for k in range(2)]])
    np.testing.assert_allclose(kernels.vlad_aggregate(a, x, c), want, atol=1e-12)


@pytest.mark.parametrize("value,expected", [("0", False), ("off", False), ("1", True)])
def test_env_flag_selects_path(value, expected):
    code = "from mgnma import kernels; print(kernels.USE_NUMBA)"
    env = dict(os.environ, MGNMA_NUMBA=value)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == str(expected and kernels.HAVE_NUMBA)
