"""Inner-loop kernels with a numba path and a pure-numpy path.

The numba path is used when numba imports and ``MGNMA_NUMBA`` is not set to
``0``/``false``/``off``. Both paths are always importable as
``<name>_numpy`` / ``<name>_numba`` so tests and benchmarks can compare them.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return wrap


def _flag_enabled() -> bool:
    return os.environ.get("MGNMA_NUMBA", "1").strip().lower() not in ("0", "false", "off", "no")


USE_NUMBA = HAVE_NUMBA and _flag_enabled()


# -- per-column Pearson correlation ----------------------------------------


def pearson_columns_numpy(x, y):
    """Correlation of each column of `x` with the same column of `y`.

    Returns ``(r, degenerate)``; degenerate columns (either side constant)
    score 0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx = x - x.mean(axis=0)
    dy = y - y.mean(axis=0)
    sxy = (dx * dy).sum(axis=0)
    sxx = (dx * dx).sum(axis=0)
    syy = (dy * dy).sum(axis=0)
    degenerate = (x.min(axis=0) == x.max(axis=0)) | (y.min(axis=0) == y.max(axis=0))
    degenerate |= (sxx == 0.0) | (syy == 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = sxy / np.sqrt(sxx * syy)
    r = np.where(degenerate, 0.0, np.clip(r, -1.0, 1.0))
    return r, degenerate


@njit(cache=True)
def pearson_columns_numba(x, y):
    T, C = x.shape
    r = np.zeros(C)
    degenerate = np.zeros(C, dtype=np.bool_)
    for j in range(C):
        mx = 0.0
        my = 0.0
        xmin = x[0, j]
        xmax = x[0, j]
        ymin = y[0, j]
        ymax = y[0, j]
        for t in range(T):
            xv = float(x[t, j])
            yv = float(y[t, j])
            mx += xv
            my += yv
            xmin = min(xmin, x[t, j])
            xmax = max(xmax, x[t, j])
            ymin = min(ymin, y[t, j])
            ymax = max(ymax, y[t, j])
        mx /= T
        my /= T
        sxy = 0.0
        sxx = 0.0
        syy = 0.0
        for t in range(T):
            a = float(x[t, j]) - mx
            b = float(y[t, j]) - my
            sxy += a * b
            sxx += a * a
            syy += b * b
        if xmin == xmax or ymin == ymax or sxx == 0.0 or syy == 0.0:
            degenerate[j] = True
            continue
        v = sxy / np.sqrt(sxx * syy)
        r[j] = min(1.0, max(-1.0, v))
    return r, degenerate


# -- row softmax ------------------------------------------------------------


def softmax_rows_numpy(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@njit(cache=True)
def _softmax2d_numba(z):
    out = np.empty_like(z)
    for i in range(z.shape[0]):
        m = z[i, 0]
        for j in range(1, z.shape[1]):
            m = max(m, z[i, j])
        s = 0.0
        for j in range(z.shape[1]):
            e = np.exp(z[i, j] - m)
            out[i, j] = e
            s += e
        for j in range(z.shape[1]):
            out[i, j] = out[i, j] / s
    return out


def softmax_rows_numba(z):
    z = np.ascontiguousarray(z)
    return _softmax2d_numba(z.reshape(-1, z.shape[-1])).reshape(z.shape)


# -- NetVLAD residual aggregation ------------------------------------------


def vlad_aggregate_numpy(a, x, c):
    """V[b, k] = sum_t a[b, t, k] * (x[b, t] - c[k]), accumulated in float64."""
    a64 = a.astype(np.float64)
    v = np.einsum("btk,btd->bkd", a64, x.astype(np.float64))
    v -= a64.sum(axis=1)[:, :, None] * c.astype(np.float64)[None]
    return v.astype(x.dtype)


@njit(cache=True)
def _vlad_aggregate_numba(a, x, c):
    B, n, K = a.shape
    D = x.shape[2]
    v = np.zeros((B, K, D))
    for b in range(B):
        for t in range(n):
            for k in range(K):
                w = float(a[b, t, k])
                for d in range(D):
                    v[b, k, d] += w * (float(x[b, t, d]) - float(c[k, d]))
    return v


def vlad_aggregate_numba(a, x, c):
    return _vlad_aggregate_numba(a, x, c).astype(x.dtype)


def vlad_aggregate_backward_numpy(a, x, c, dv):
    """Gradients of `vlad_aggregate` w.r.t. (a, x, c) given dL/dV."""
    da = np.einsum("bkd,btd->btk", dv, x) - np.einsum("bkd,kd->bk", dv, c)[:, None, :]
    dx = np.einsum("btk,bkd->btd", a, dv)
    dc = -np.einsum("bk,bkd->kd", a.sum(axis=1), dv)
    return da, dx, dc


@njit(cache=True)
def _vlad_backward_numba(a, x, c, dv):
    B, n, K = a.shape
    D = x.shape[2]
    da = np.zeros_like(a)
    dx = np.zeros_like(x)
    dc = np.zeros_like(c)
    for b in range(B):
        for t in range(n):
            for k in range(K):
                w = a[b, t, k]
                acc = 0.0
                for d in range(D):
                    g = dv[b, k, d]
                    acc += g * (x[b, t, d] - c[k, d])
                    dx[b, t, d] += w * g
                    dc[k, d] -= w * g
                da[b, t, k] = acc
    return da, dx, dc


def vlad_aggregate_backward_numba(a, x, c, dv):
    return _vlad_backward_numba(a, x, c, dv.astype(x.dtype))


if USE_NUMBA:
    pearson_columns = pearson_columns_numba
    softmax_rows = softmax_rows_numba
    vlad_aggregate = vlad_aggregate_numba
    vlad_aggregate_backward = vlad_aggregate_backward_numba
else:
    pearson_columns = pearson_columns_numpy
    softmax_rows = softmax_rows_numpy
    vlad_aggregate = vlad_aggregate_numpy
    vlad_aggregate_backward = vlad_aggregate_backward_numpy
