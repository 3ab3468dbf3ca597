#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the four hot kernels on a fitting-sized workload (210x210 lattice,
5x5 anchors, one Gauss-Newton-sweep worth of points) and prints per-call
milliseconds plus the speedup. Run directly:

    python benchmarks/kernel_bench.py
"""

import time

import numpy as np

from warpmix.kernels import numpy_impl

try:
    from warpmix.kernels import numba_impl
except ImportError:
    numba_impl = None


def bench(fn, args, repeat=20):
    fn(*args)  # warm-up (numba compiles here)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat * 1000.0


def main():
    rng = np.random.default_rng(0)
    m1 = m2 = 210
    mw = 5
    n = m1 * m2
    values = rng.random((m1, m2))
    ws = 0.02 * rng.standard_normal((mw, mw))
    wt = 0.02 * rng.standard_normal((mw, mw))
    ss, tt = np.meshgrid(
        np.arange(1, m1 + 1) / (m1 + 1.0),
        np.arange(1, m2 + 1) / (m2 + 1.0),
        indexing="ij",
    )
    ps, pt = ss.ravel(), tt.ravel()

    cases = [
        ("bilinear_batch", "bilinear_batch", (values, ps, pt)),
        ("displacement_batch", "displacement_batch", (ws, wt, ps, pt)),
        ("basis_batch", "basis_batch", (mw, mw, ps, pt)),
        ("inverse_warp_batch", "inverse_warp_batch", (ws, wt, ps, pt, 1e-8, 20)),
    ]

    print(f"workload: {m1}x{m2} lattice ({n} points), {mw}x{mw} anchors")
    print(f"{'kernel':<22}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for label, name, args in cases:
        t_np = bench(getattr(numpy_impl, name), args)
        if numba_impl is None:
            print(f"{label:<22}{t_np:>10.3f}{'n/a':>10}{'':>9}")
            continue
        t_nb = bench(getattr(numba_impl, name), args)
        print(f"{label:<22}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
