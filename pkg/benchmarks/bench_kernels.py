"""Compare the compiled and numpy kernel backends.

Usage: ``python3 benchmarks/bench_kernels.py [--repeat N]``. Prints one line
per (kernel, problem size) with the best wall time of each backend, the
speed-up and the largest absolute difference between their outputs.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from fedate import _kernels_py

try:
    from fedate import _kernels as compiled
except ImportError:  # extension not built
    compiled = None


def fedavg_problem(K: int, p: int, n: int, seed: int = 0):
    gen = np.random.default_rng(seed)
    grams, xty = [], []
    for _ in range(K):
        X = np.column_stack([np.ones(n), gen.normal(size=(n, p - 1))])
        y = X @ gen.normal(size=p) + gen.normal(size=n)
        grams.append(X.T @ X)
        xty.append(X.T @ y)
    grams, xty = np.stack(grams), np.stack(xty)
    counts = np.full(K, float(n))
    lam = sum(np.linalg.eigvalsh(g / n)[-1] for g in grams) / K
    eta = np.full(K, 0.9 / lam)
    return grams, xty, counts, counts / counts.sum(), eta, np.zeros(p)


def time_call(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled extension not available; only the numpy backend can run")
    print(f"{'kernel':<28}{'numpy s':>12}{'cython s':>12}{'speed-up':>10}{'max |diff|':>13}")
    for K, p, rounds in [(5, 3, 2000), (5, 11, 2000), (13, 16, 2000), (5, 31, 500)]:
        prob = fedavg_problem(K, p, 200)
        call = lambda mod: mod.fedavg_full_batch(*prob, rounds, 1, -1.0, 1e12)
        t_py = time_call(lambda: call(_kernels_py), args.repeat)
        row = f"{f'fedavg K={K} p={p} T={rounds}':<28}{t_py:>12.4f}"
        if compiled is not None:
            t_c = time_call(lambda: call(compiled), args.repeat)
            diff = np.max(np.abs(call(compiled)[0] - call(_kernels_py)[0]))
            row += f"{t_c:>12.4f}{t_py / t_c:>10.1f}{diff:>13.2e}"
        print(row)
    for p in (4, 11, 31):
        gen = np.random.default_rng(p)
        A = gen.normal(size=(50, p))
        G = np.ascontiguousarray(A.T @ A)
        start = np.ones(p) / np.sqrt(p)
        call = lambda mod: mod.power_iteration(G, start, 1e-12, 100000)
        t_py = time_call(lambda: call(_kernels_py), args.repeat)
        row = f"{f'power iteration p={p}':<28}{t_py:>12.4f}"
        if compiled is not None:
            t_c = time_call(lambda: call(compiled), args.repeat)
            diff = abs(call(compiled)[0] - call(_kernels_py)[0])
            row += f"{t_c:>12.4f}{t_py / t_c:>10.1f}{diff:>13.2e}"
        print(row)


if __name__ == "__main__":
    main()
