"""Compare the compiled and pure-Python transport simplex backends.

Usage: python benchmarks/bench_transport.py [--sizes 50 100 200] [--repeats 3]
"""

import argparse
import time

import numpy as np

from flatness.measure import DiscreteMeasure
from flatness.transport import COMPILED_AVAILABLE, exact_wasserstein


def random_pair(m, k, rng):
    a = rng.random(m) + 0.1
    b = rng.random(k) + 0.1
    b *= a.sum() / b.sum()
    return DiscreteMeasure(rng.random((m, 2)), a), DiscreteMeasure(rng.random((k, 2)), b)


def best_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[50, 100, 200, 300])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not COMPILED_AVAILABLE:
        print("compiled backend unavailable; only the python backend is timed")
    rng = np.random.default_rng(args.seed)
    print(f"{'size':>6} {'python [s]':>11} {'compiled [s]':>13} {'speedup':>8} {'|dW|':>9}")
    for m in args.sizes:
        mu, nu = random_pair(m, m, rng)
        tp, rp = best_time(lambda: exact_wasserstein(mu, nu, 2, backend="python"), args.repeats)
        if COMPILED_AVAILABLE:
            tc, rc = best_time(lambda: exact_wasserstein(mu, nu, 2, backend="compiled"), args.repeats)
            diff = abs(rp.distance - rc.distance)
            print(f"{m:>6} {tp:>11.4f} {tc:>13.4f} {tp / tc:>8.1f} {diff:>9.1e}")
        else:
            print(f"{m:>6} {tp:>11.4f} {'-':>13} {'-':>8} {'-':>9}")


if __name__ == "__main__":
    main()
