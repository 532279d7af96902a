"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

The first numba call (compilation or cache load) is excluded.
"""
import argparse
import time

import numpy as np

from ncres import _kernels as kn


def best(fn, repeat):
    fn()
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return min(out)


def cases(rng):
    n = 2
    A = rng.standard_normal((n, n))
    theta = A - A.T
    ka = np.unique(rng.integers(-12, 13, size=(400, n)), axis=0).astype(np.int64)
    kb = np.unique(rng.integers(-12, 13, size=(400, n)), axis=0).astype(np.int64)
    va = rng.standard_normal((1, len(ka))) + 0j
    vb = rng.standard_normal((1, len(kb))) + 0j
    lo, hi = kn.output_box(ka, kb, np.full(n, -24), np.full(n, 24))
    yield ("twisted product 400x400", lambda: kn.twisted_numba(ka, va, kb, vb, theta, lo, hi),
           lambda: kn.twisted_numpy(ka, va, kb, vb, theta, lo, hi))
    K = 40
    ax = np.arange(-K, K + 1)
    cols = np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2).astype(np.int64)
    keys = rng.integers(-3, 4, size=(12, 4)).astype(np.int64)
    vals = rng.standard_normal((1, 12)) + 0j
    yield ("multiplier matrix K=40", lambda: kn.mult_entries_numba(keys, vals, cols, theta, K),
           lambda: kn.mult_entries_numpy(keys, vals, cols, theta, K))
    yield ("lattice power sum K=300", lambda: kn.lattice_power_numba(300, 2, 1.3 + 0.2j),
           lambda: kn.lattice_power_numpy(300, 2, 1.3 + 0.2j))


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, f_nb, f_np in cases(rng):
        a = best(f_nb, args.repeat) if kn.HAVE_NUMBA else float("nan")
        b = best(f_np, args.repeat)
        print(f"{name:28s} {1e3 * a:10.2f} {1e3 * b:10.2f} {b / a:8.1f}")


if __name__ == "__main__":
    main()
