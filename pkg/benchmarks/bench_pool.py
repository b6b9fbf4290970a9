"""Benchmark the compiled displacement-search kernel against the pure
numpy fallback.

Usage: python3 benchmarks/bench_pool.py [--repeats N]
"""

import argparse
import importlib
import statistics
import time

import numpy as np

from partpool.backbone import FeatureStack
from partpool.core import Rect
from partpool.pooling import Region, fit_part_grid

py_kernel = importlib.import_module("partpool.kernels._search_py")
try:
    cy_kernel = importlib.import_module("partpool.kernels._search_cy")
except ImportError:
    cy_kernel = None


def make_case(rng, k, classes, size):
    stack = FeatureStack(k, classes,
                         rng.normal(size=(k * k, classes + 1, size, size)))
    grid = fit_part_grid(Region(Rect(1.2, 1.1, size - 3.7, size - 2.6)),
                         k, size, size)
    return stack, grid


def time_kernel(kernel, stack, grid, lam, radius, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        kernel.pool_search(stack.normalized, grid.xlo, grid.xhi,
                           grid.ylo, grid.yhi, grid.part_w, grid.part_h,
                           lam, radius, radius)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = [
        ("k=2 C=2 map=12 r=2", 2, 2, 12, 2),
        ("k=7 C=3 map=24 r=3", 7, 3, 24, 3),
        ("k=7 C=3 map=48 r=5", 7, 3, 48, 5),
        ("k=9 C=8 map=48 r=4", 9, 8, 48, 4),
    ]
    print(f"{'case':22} {'python':>10} {'cython':>10} {'speedup':>8}")
    for label, k, classes, size, radius in cases:
        stack, grid = make_case(rng, k, classes, size)
        t_py = time_kernel(py_kernel, stack, grid, 0.3, radius, args.repeats)
        if cy_kernel is None:
            print(f"{label:22} {t_py * 1e6:9.1f}us {'n/a':>10} {'n/a':>8}")
            continue
        t_cy = time_kernel(cy_kernel, stack, grid, 0.3, radius, args.repeats)
        v_py, d_py = py_kernel.pool_search(
            stack.normalized, grid.xlo, grid.xhi, grid.ylo, grid.yhi,
            grid.part_w, grid.part_h, 0.3, radius, radius)
        v_cy, d_cy = cy_kernel.pool_search(
            stack.normalized, grid.xlo, grid.xhi, grid.ylo, grid.yhi,
            grid.part_w, grid.part_h, 0.3, radius, radius)
        assert np.array_equal(d_py, d_cy), "kernels disagree on displacements"
        print(f"{label:22} {t_py * 1e6:9.1f}us {t_cy * 1e6:9.1f}us "
              f"{t_py / t_cy:7.1f}x")


if __name__ == "__main__":
    main()
