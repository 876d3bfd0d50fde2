#!/usr/bin/env python3
"""Benchmark the motion-transfer kernel: compiled extension vs numpy.

The per-Gaussian similarity fit dominates pipeline runtime, so this is
the loop worth measuring. Problem sizes mimic a production run: one
timestep pair, K neighbors per Gaussian out of a few hundred anchors.

Usage:
    python benchmarks/bench_transfer.py [--gaussians 50000] [--anchors 600]
        [--neighbors 150] [--repeats 5]

G2L_THREADS caps the compiled backend's OpenMP threads.
"""

import argparse
import time

import numpy as np

from gslift import kernels
from gslift.rotation import quat_rotate, random_quat


def build_problem(n_gauss, n_anchors, k, seed=0):
    rng = np.random.default_rng(seed)
    xa = rng.uniform(-0.5, 0.5, size=(n_anchors, 3))
    q = random_quat(rng)
    ya = 1.02 * quat_rotate(q, xa) + rng.uniform(-0.05, 0.05, size=3)
    mu = rng.uniform(-0.5, 0.5, size=(n_gauss, 3))
    nbr = rng.integers(0, n_anchors, size=(n_gauss, k)).astype(np.int64)
    w = rng.uniform(0.2, 1.0, size=(n_gauss, k))
    w /= w.sum(axis=1, keepdims=True)
    eligible = np.ones(n_anchors, dtype=bool)
    return mu, xa, ya, nbr, w, eligible


def time_backend(mod, args_tuple, mode, repeats, n_threads):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        mod.transfer_step(*args_tuple, mode, n_threads)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--gaussians", type=int, default=50_000)
    parser.add_argument("--anchors", type=int, default=600)
    parser.add_argument("--neighbors", type=int, default=150)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    problem = build_problem(args.gaussians, args.anchors, args.neighbors)
    backends = kernels.available_backends()
    n_threads = kernels.thread_count()

    print(f"transfer step: {args.gaussians} Gaussians x {args.neighbors} neighbors "
          f"({args.anchors} anchors), best of {args.repeats}")
    results = {}
    for mode_name, mode in (("linear", kernels.MODE_LINEAR),
                            ("rigid", kernels.MODE_RIGID)):
        for name, mod in sorted(backends.items()):
            elapsed = time_backend(mod, problem, mode, args.repeats, n_threads)
            results[(mode_name, name)] = elapsed
            rate = args.gaussians / elapsed / 1e6
            print(f"  {mode_name:<7} {name:<9} {elapsed * 1e3:8.1f} ms   "
                  f"({rate:5.2f} M Gaussians/s)")
        if len(backends) == 2:
            speedup = results[(mode_name, "numpy")] / results[(mode_name, "compiled")]
            print(f"  {mode_name:<7} speedup  {speedup:8.1f}x")

    if len(backends) == 2:
        a = backends["numpy"].transfer_step(*problem, kernels.MODE_RIGID, 0)
        b = backends["compiled"].transfer_step(*problem, kernels.MODE_RIGID, 0)
        err = max(float(np.max(np.abs(a[0] - b[0]))), float(np.max(np.abs(a[2] - b[2]))))
        print(f"backend agreement (rigid): max |diff| = {err:.2e}")


if __name__ == "__main__":
    main()
