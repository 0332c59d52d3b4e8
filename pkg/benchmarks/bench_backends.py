"""Time the compiled core against the pure-Python loops on the two hot paths.

    python3 benchmarks/bench_backends.py [--repeats 3] [--n 4000]
"""
import argparse
import time

import numpy as np

from batchorder import _backend
from batchorder.discrepancy import LossKind
from batchorder.kernel import KernelSpec
from batchorder.schedule import make_schedule
from batchorder.stratify import Stratification, assign_constrained


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--n", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    n = args.n

    P = rng.exponential(size=(n, 20))
    S, T = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))

    def schedule_case(k, M, loss, spec):
        labels = np.arange(n) % k
        ss, st = Stratification(rng.permutation(labels), k), Stratification(rng.permutation(labels), k)
        return lambda: make_schedule(ss, st, S, T, M, loss, spec, seed=1, D0=0.01)

    cases = [
        ("assign_constrained n=%d k=20" % n, lambda: assign_constrained(P, n // 40)),
        ("reorder MMD linear k=20 M=100", schedule_case(20, 100, LossKind.MMD, KernelSpec.linear())),
        ("reorder MMD rbf-mix k=10 M=50", schedule_case(10, 50, LossKind.MMD, KernelSpec.rbf_mixture())),
        ("reorder CORAL k=20 M=100", schedule_case(20, 100, LossKind.CORAL, KernelSpec.linear())),
    ]
    print(f"{'case':34s} {'compiled ms':>12s} {'python ms':>12s} {'speedup':>8s}")
    for name, fn in cases:
        row = {}
        for backend in ("compiled", "python"):
            if backend not in _backend.BACKENDS:
                row[backend] = float("nan")
                continue
            prev = _backend.set_backend(backend)
            try:
                row[backend] = best_of(fn, args.repeats) * 1e3
            finally:
                _backend.set_backend(prev)
        print(f"{name:34s} {row['compiled']:12.1f} {row['python']:12.1f} "
              f"{row['python'] / row['compiled']:8.1f}x")


if __name__ == "__main__":
    main()
