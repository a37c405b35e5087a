"""Benchmark the compiled kernels against the numpy fallback.

Times the two hot paths (mixture EM fitting and batch kernel scoring) on
synthetic workloads sized like a real training run, and prints per-backend
timings plus the speedup. Run from the repository root:

    python3 benchmarks/bench_kernels.py [--quick]
"""

import argparse
import time

import numpy as np

from partwise._backend import load_backend


def _workload(rng, n_points):
    pts = np.vstack(
        [
            rng.normal([1.2, 0.0], 0.12, (n_points // 3, 2)),
            rng.normal([3.6, 0.0], 0.12, (n_points // 3, 2)),
            rng.normal([11.4, 0.0], 0.15, (n_points - 2 * (n_points // 3), 2)),
        ]
    )
    means = pts[rng.choice(len(pts), 5, replace=False)].copy()
    variances = np.tile(pts.var(axis=0), (5, 1))
    weights = np.full(5, 0.2)
    return pts, means, variances, weights


def bench_em(mod, rng, n_points, repeats):
    pts, means, variances, weights = _workload(rng, n_points)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        mod.em_fit(pts, means.copy(), variances.copy(), weights.copy(), 500, 1e-6, 1e-4)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_scores(mod, rng, n_queries, repeats):
    means = rng.uniform(0, 14, (5, 2))
    variances = rng.uniform(0.01, 0.2, (5, 2))
    xs = rng.uniform(-1, 16, (n_queries, 2))
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for start in range(0, n_queries, 8):  # realistic: many tiny batches
            mod.kernel_max_scores(xs[start : start + 8], means, variances)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true", help="small sizes for CI")
    args = parser.parse_args(argv)

    n_points = 500 if args.quick else 5000
    n_queries = 800 if args.quick else 40000
    repeats = 2 if args.quick else 5

    backends = {}
    for name in ("python", "c"):
        try:
            backends[name] = load_backend(name)
        except ImportError:
            print(f"backend {name!r} unavailable, skipping")

    results = {}
    for name, mod in backends.items():
        rng = np.random.default_rng(0)
        em = bench_em(mod, rng, n_points, repeats)
        sc = bench_scores(mod, rng, n_queries, repeats)
        results[name] = (em, sc)
        print(f"{name:>7}: em_fit {em * 1e3:8.2f} ms   kernel_max_scores {sc * 1e3:8.2f} ms")

    if len(results) == 2:
        em_speedup = results["python"][0] / results["c"][0]
        sc_speedup = results["python"][1] / results["c"][1]
        print(f"speedup: em_fit x{em_speedup:.1f}   kernel_max_scores x{sc_speedup:.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
