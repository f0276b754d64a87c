"""Timing comparison of the sample-entropy backends.

The compiled kernel and the NumPy fallback must agree exactly on the
(A, B) match counts; this script checks that while timing both across
series lengths.

usage: python benchmarks/bench_sample_entropy.py [--repeats N]
"""

import argparse
import time

import numpy as np

from unicardio import _sampen_np


def numpy_counts(x, m, r):
    return _sampen_np.match_counts(x, m, r)


try:
    from unicardio import _sampen

    def compiled_counts(x, m, r):
        return _sampen.match_counts(np.ascontiguousarray(x), m, r)

except ImportError:
    compiled_counts = None


def best_of(fn, x, m, r, repeats):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(x, m, r)
        best = min(best, time.perf_counter() - t0)
    return best, out


def run(repeats):
    rng = np.random.default_rng(0)
    print(f"{'n':>6} {'numpy (ms)':>12} {'compiled (ms)':>14} {'speedup':>8}")
    for n in (128, 512, 2048, 8192):
        x = rng.standard_normal(n)
        r = 0.2 * float(x.std())
        t_np, (a_np, b_np) = best_of(numpy_counts, x, 2, r, repeats)
        if compiled_counts is None:
            print(f"{n:>6} {t_np * 1e3:>12.3f} {'unavailable':>14} {'-':>8}")
            continue
        t_c, (a_c, b_c) = best_of(compiled_counts, x, 2, r, repeats)
        if (a_np, b_np) != (a_c, b_c):
            raise AssertionError(
                f"backend mismatch at n={n}: numpy {(a_np, b_np)} vs "
                f"compiled {(a_c, b_c)}"
            )
        print(f"{n:>6} {t_np * 1e3:>12.3f} {t_c * 1e3:>14.3f} "
              f"{t_np / t_c:>7.1f}x")
    if compiled_counts is not None:
        print("backends agree on all match counts")


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    run(parser.parse_args().repeats)
