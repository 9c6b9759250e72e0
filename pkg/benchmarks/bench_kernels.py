"""Benchmark the numba kernels against their pure-numpy twins.

Run:  python benchmarks/bench_kernels.py [--repeats 20]

Both backends are imported directly (bypassing the DEPMAX_BACKEND
dispatch) so one process can time them side by side. Shapes mirror the
desk-scale training step: batch 64 of 3x32x32 images.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from depmax.kernels import numba_impl, numpy_impl


def timeit(fn, repeats):
    fn()  # warm (JIT compile / cache load)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e3  # ms


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--dtype", choices=("fp32", "fp64"), default="fp32")
    args = parser.parse_args()
    dtype = np.float32 if args.dtype == "fp32" else np.float64

    rng = np.random.default_rng(0)
    x = rng.normal(size=(64, 3, 32, 32)).astype(dtype)
    w = rng.normal(size=(16, 3, 3, 3)).astype(dtype)
    out = numpy_impl.conv2d_forward(x, w, 2, 1)
    g = np.ones_like(out)
    img = rng.random((96, 96))
    gy, gx = np.gradient(img)
    gx = np.ascontiguousarray(gx)
    gy = np.ascontiguousarray(gy)

    cases = [
        ("conv2d fwd 64x3x32x32 -> 16", lambda m: m.conv2d_forward(x, w, 2, 1)),
        ("conv2d bwd_x", lambda m: m.conv2d_backward_x(g, w, 2, 1, 32, 32)),
        ("conv2d bwd_w", lambda m: m.conv2d_backward_w(g, x, 2, 1, 3)),
        ("lsd 96x96 k=3", lambda m: m.lsd2d(img, 3)),
        ("hog 96x96 bins=24 pool=8", lambda m: m.hog_cells(gx, gy, 24, 8)),
    ]

    print(f"{'kernel':<30} {'numpy ms':>10} {'numba ms':>10} {'speedup':>9}")
    for name, call in cases:
        t_np = timeit(lambda: call(numpy_impl), args.repeats)
        t_nb = timeit(lambda: call(numba_impl), args.repeats)
        print(f"{name:<30} {t_np:>10.3f} {t_nb:>10.3f} {t_np / t_nb:>8.2f}x")


if __name__ == "__main__":
    main()
