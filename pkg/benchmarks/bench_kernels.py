"""Time the numba and numpy paths of each kernel on full-scale shapes.

    python benchmarks/bench_kernels.py [--repeat 5]

The first numba call (JIT compile) is excluded. Outputs of the two paths are
compared before timing so a fast-but-wrong kernel cannot win.
"""

import argparse
import time

import numpy as np

from mgnma import kernels


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    # per-video correlation: 600 frames x 15 expressions, many videos at once
    x = rng.standard_normal((600, 15))
    y = rng.standard_normal((600, 15))
    yield "pearson_columns 600x15", "pearson_columns", (x, y)
    z = rng.standard_normal((1536, 3)).astype(np.float32)
    yield "softmax_rows 1536x3 (gate)", "softmax_rows", (z,)
    # NetVLAD on 80 frames of 1536-d image features, 8 clusters, batch 32
    a = kernels.softmax_rows_numpy(rng.standard_normal((32, 80, 8))).astype(np.float32)
    X = rng.standard_normal((32, 80, 1536)).astype(np.float32)
    c = rng.standard_normal((8, 1536)).astype(np.float32)
    yield "vlad_aggregate 32x80x1536, K=8", "vlad_aggregate", (a, X, c)
    dv = rng.standard_normal((32, 8, 1536)).astype(np.float32)
    yield "vlad_aggregate_backward", "vlad_aggregate_backward", (a, X, c, dv)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not kernels.HAVE_NUMBA:
        print("numba is not installed; only the numpy path is available")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<34} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for label, name, inputs in cases(rng):
        f_np = getattr(kernels, f"{name}_numpy")
        f_nb = getattr(kernels, f"{name}_numba")
        ref, got = f_np(*inputs), f_nb(*inputs)  # also triggers compilation
        for r, g in zip(ref if isinstance(ref, tuple) else (ref,), got if isinstance(got, tuple) else (got,)):
            np.testing.assert_allclose(r, g, rtol=1e-4, atol=1e-4)
        t_np = best_of(f_np, inputs, args.repeat)
        t_nb = best_of(f_nb, inputs, args.repeat)
        print(f"{label:<34} {t_np * 1e3:>10.3f} {t_nb * 1e3:>10.3f} {t_np / t_nb:>7.2f}x")
    print(f"active path: {'numba' if kernels.USE_NUMBA else 'numpy'} (set MGNMA_NUMBA=0 to force numpy)")


if __name__ == "__main__":
    main()
