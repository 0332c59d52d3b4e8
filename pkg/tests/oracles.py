"""Slow, loop-based reference implementations used as test oracles."""
import itertools

import numpy as np

from batchorder.kernel import KernelKind, eval_kernel


def centred(spec, X):
    X = np.asarray(X, dtype=float)
    return X - X.mean(axis=0) if spec.kind is KernelKind.CORAL_MAP else X


def mmd_loops(spec, S, T, idx_s, w_s, idx_t, w_t):
    zs, zt = centred(spec, S), centred(spec, T)
    ns, nt = len(S), len(T)
    total = 0.0
    for i, wi in zip(idx_s, w_s):
        for j, wj in zip(idx_s, w_s):
            total += wi * wj * eval_kernel(spec, zs[i], zs[j]) / (ns * ns)
    for i, wi in zip(idx_t, w_t):
        for j, wj in zip(idx_t, w_t):
            total += wi * wj * eval_kernel(spec, zt[i], zt[j]) / (nt * nt)
    for i, wi in zip(idx_s, w_s):
        for j, wj in zip(idx_t, w_t):
            total -= 2.0 * wi * wj * eval_kernel(spec, zs[i], zt[j]) / (ns * nt)
    return total


def full_mmd_loops(spec, S, T):
    ns, nt = len(S), len(T)
    return mmd_loops(spec, S, T, range(ns), [1.0] * ns, range(nt), [1.0] * nt)


def cov_loops(Z, idx, w, n):
    d = Z.shape[1]
    mu = [sum(wi * Z[i, a] for i, wi in zip(idx, w)) / n for a in range(d)]
    C = np.zeros((d, d))
    for a in range(d):
        for b in range(d):
            C[a, b] = sum(wi * (Z[i, a] - mu[a]) * (Z[i, b] - mu[b]) for i, wi in zip(idx, w)) / (n - 1)
    return C


def coral_loops(S, T, idx_s, w_s, idx_t, w_t):
    cs = cov_loops(np.asarray(S), idx_s, w_s, len(S))
    ct = cov_loops(np.asarray(T), idx_t, w_t, len(T))
    return float(sum((cs[a, b] - ct[a, b]) ** 2 for a in range(cs.shape[0]) for b in range(cs.shape[1])))


def greedy_reorder_naive(src, tgt, objective):
    """Stage-by-stage greedy pass that re-evaluates the whole objective for every candidate."""
    src, tgt = src.copy(), tgt.copy()
    k, M = src.shape
    comparisons = 0
    for m in range(M - 1):
        for h in range(k):
            for tup in (src, tgt):
                base = objective(src, tgt)
                best, best_m = base, m
                for m2 in range(m + 1, M):
                    tup[h, m], tup[h, m2] = tup[h, m2], tup[h, m]
                    val = objective(src, tgt)
                    tup[h, m], tup[h, m2] = tup[h, m2], tup[h, m]
                    comparisons += 1
                    if val < best:
                        best, best_m = val, m2
                if best_m != m:
                    tup[h, m], tup[h, best_m] = tup[h, best_m], tup[h, m]
    return src, tgt, comparisons


def all_row_permutations(tuples):
    rows = [list(itertools.permutations(r)) for r in tuples]
    for combo in itertools.product(*rows):
        yield np.array(combo, dtype=np.int64)
