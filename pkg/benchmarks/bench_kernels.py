#!/usr/bin/env python3
"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeats 5] [--seed 0]

Both backends are checked for identical output before timing.
"""

import argparse
import time

import numpy as np

from lightpath._kernels import _pykernels

try:
    from lightpath._kernels import _ckernels
except ImportError:
    _ckernels = None


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def split_case(rng, n, f):
    x = rng.normal(size=(n, f))
    y = rng.normal(size=n)
    order = np.argsort(x, axis=0, kind="stable")
    xs = np.ascontiguousarray(np.take_along_axis(x, order, axis=0))
    ys = np.ascontiguousarray(y[order])
    return xs, ys


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)

    rows = []
    for n, f in [(200, 32), (1000, 32), (5000, 32)]:
        xs, ys = split_case(rng, n, f)
        py = lambda xs=xs, ys=ys: _pykernels.best_split(xs, ys, 1)
        cy = (lambda xs=xs, ys=ys: _ckernels.best_split(xs, ys, 1)) if _ckernels else None
        rows.append((f"best_split n={n} f={f}", py, cy))
    for n in (500, 2000, 5000):
        x, y = rng.integers(0, 50, size=n).astype(float), rng.normal(size=n)
        py = lambda x=x, y=y: _pykernels.kendall_counts(x, y)
        cy = (lambda x=x, y=y: _ckernels.kendall_counts(x, y)) if _ckernels else None
        rows.append((f"kendall_counts n={n}", py, cy))

    print(f"{'kernel':<28}{'numpy (ms)':>12}{'compiled (ms)':>15}{'speedup':>9}")
    for name, py, cy in rows:
        tp = best_of(py, args.repeats) * 1e3
        if cy is None:
            print(f"{name:<28}{tp:>12.2f}{'n/a':>15}{'':>9}")
            continue
        if py() != cy():
            raise SystemExit(f"backends disagree on {name}")
        tc = best_of(cy, args.repeats) * 1e3
        print(f"{name:<28}{tp:>12.2f}{tc:>15.2f}{tp / tc:>8.1f}x")


if __name__ == "__main__":
    main()
