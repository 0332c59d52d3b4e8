"""Pure-Python versions of the hot loops (used when ``_core`` is not built)."""
from __future__ import annotations

import numpy as np

from ._reorder import SOURCE, TARGET, accept_tolerance


def assign_constrained(P: np.ndarray, n_min: int, order: np.ndarray):
    """Row-by-row size-weighted assignment with a minimum cluster size.

    Returns ``(labels, evaluations)``.
    """
    n, k = P.shape
    labels = np.empty(n, dtype=np.int64)
    sizes = [0] * k
    deficit = n_min * k
    remaining = n
    evals = 0
    for i in order:
        row = P[i]
        # free choice only while the rows left after this one still cover every deficit
        free = remaining - 1 >= deficit
        best = -1
        best_val = 0.0
        for h in range(k):
            evals += 1
            nh = sizes[h]
            if free or nh < n_min:
                val = row[h] * (nh + 1)
                if best < 0 or val < best_val:
                    best, best_val = h, val
        labels[i] = best
        if sizes[best] < n_min:
            deficit -= 1
        sizes[best] += 1
        remaining -= 1
    return labels, evals


def greedy_reorder(state) -> tuple[list[float], int]:
    """Single greedy pass over positions; returns (objective trace, comparisons)."""
    k, M = state.pos[SOURCE].shape
    obj = state.objective()
    trace = [obj]
    comparisons = 0
    for m in range(M - 1):
        others = np.arange(m, M)
        for h in range(k):
            for dom in (SOURCE, TARGET):
                delta = state.candidate_deltas(dom, h, m, others)
                comparisons += M - m - 1
                j = int(np.argmin(delta))
                if delta[j] < -accept_tolerance(state.D, state.d0):
                    state.apply_swap(dom, h, m, m + j)
                    obj = state.objective()
                    trace.append(obj)
    return trace, comparisons
