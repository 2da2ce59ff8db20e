"""Compiled vs NumPy-fallback kernel timings.

Run with ``python benchmarks/bench_kernels.py``; prints one line per kernel
and size with the best-of-``repeat`` wall time for each backend, the
speedup and the max absolute difference between the two results.
"""

import argparse
import sys
import timeit

import numpy as np

from fraclqt import _kernels_py
from fraclqt._backend import compiled_kernels


def cases(n, q, m, seed=0):
    rng = np.random.default_rng(seed)
    alpha = 0.9
    h = 1.0 / n
    c = h ** (-alpha)
    w = _kernels_py.gl_weights(alpha, n)
    F = rng.standard_normal((n + 1, q))
    A = rng.standard_normal((q, q)) * 0.1
    M = np.ascontiguousarray(np.broadcast_to(c * np.eye(q) - A, (n + 1, q, q)))
    Mt = np.ascontiguousarray(np.transpose(M, (0, 2, 1)))
    R = rng.standard_normal((n + 1, q, m))
    return {
        "gl_weights": lambda k: k.gl_weights(alpha, n),
        "caputo_sums": lambda k: k.caputo_sums(w, F),
        "lower_solve": lambda k: k.lower_solve(w, c, M, R),
        "upper_solve": lambda k: k.upper_solve(w, c, Mt, R),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", default="250,500,1000", help="comma-separated N")
    p.add_argument("--q", type=int, default=10, help="state dimension")
    p.add_argument("--m", type=int, default=1, help="right-hand sides")
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)

    fast = compiled_kernels()
    if fast is None:
        print("compiled extension not built; nothing to compare", file=sys.stderr)
        return 1
    print(f"{'kernel':<12} {'N':>6} {'numpy [s]':>11} {'cython [s]':>11} {'speedup':>8} {'max diff':>10}")
    for n in (int(s) for s in args.sizes.split(",")):
        for name, fn in cases(n, args.q, args.m).items():
            t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat))
            t_cy = min(timeit.repeat(lambda: fn(fast), number=1, repeat=args.repeat))
            diff = float(np.max(np.abs(np.asarray(fn(_kernels_py)) - np.asarray(fn(fast)))))
            print(f"{name:<12} {n:>6} {t_py:>11.4g} {t_cy:>11.4g} {t_py / t_cy:>8.1f} {diff:>10.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
