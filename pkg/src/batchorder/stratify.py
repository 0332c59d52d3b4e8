"""Size-weighted kernel k-means with a minimum cluster size."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import _backend


class InfeasibleConstraintError(ValueError):
    """``n < k * n_min``: the minimum cluster size cannot be met."""


@dataclass(frozen=True, eq=False)
class Stratification:
    """Partition of ``0..n-1`` into ``k`` strata (labels are 0-based)."""

    assignment: np.ndarray
    k: int
    n_min: int = 0
    sizes: np.ndarray = field(init=False)

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64).ravel()
        if a.size and (a.min() < 0 or a.max() >= self.k):
            raise ValueError(f"labels must lie in [0, {self.k})")
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)
        object.__setattr__(self, "sizes", np.bincount(a, minlength=self.k))

    def __eq__(self, other):
        if not isinstance(other, Stratification):
            return NotImplemented
        return (self.k, self.n_min) == (other.k, other.n_min) and np.array_equal(
            self.assignment, other.assignment)

    __hash__ = None

    @property
    def n(self) -> int:
        return self.assignment.size

    def members(self, h: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == h)

    def point_weights(self) -> np.ndarray:
        """Size of the stratum containing each index."""
        return self.sizes[self.assignment]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "n_min": self.n_min,
            "sizes": self.sizes.tolist(),
            "assignment": self.assignment.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Stratification:
        return cls(np.asarray(d["assignment"], dtype=np.int64), int(d["k"]), int(d.get("n_min", 0)))


@dataclass
class IterationOptions:
    max_iters: int = 100
    seed: int = 0
    random_row_order: bool = False


@dataclass
class KMeansResult:
    stratification: Stratification
    objective_trace: list[float]
    best_iteration: int
    converged: bool


def _check_feasible(n: int, k: int, n_min: int):
    if k < 1:
        raise ValueError("k must be at least 1")
    if n_min < 0:
        raise ValueError("n_min must be non-negative")
    if n < k * n_min:
        raise InfeasibleConstraintError(
            f"n={n} points cannot fill k={k} clusters of at least n_min={n_min}"
        )


def centroid_distances(G: np.ndarray, strat: Stratification) -> np.ndarray:
    """Squared RKHS distance from every point to every stratum centroid."""
    G = np.asarray(G, dtype=np.float64)
    sizes = strat.sizes.astype(np.float64)
    if np.any(sizes == 0):
        raise ValueError(f"empty stratum {int(np.argmin(sizes))}")
    U = np.zeros((strat.n, strat.k))
    U[np.arange(strat.n), strat.assignment] = 1.0
    GU = G @ U
    within = np.einsum("ih,ih->h", U, GU)
    P = np.diag(G)[:, None] - 2.0 * GU / sizes + within / sizes**2
    np.maximum(P, 0.0, out=P)
    return P


def weighted_assignment_objective(P: np.ndarray, strat: Stratification) -> float:
    """``sum_h |S_h| * sum_{i in S_h} P[i, h]``."""
    P = np.asarray(P, dtype=np.float64)
    own = P[np.arange(strat.n), strat.assignment]
    per = np.bincount(strat.assignment, weights=own, minlength=strat.k)
    return float(np.sum(strat.sizes * per))


def unweighted_assignment_objective(P: np.ndarray, strat: Stratification) -> float:
    return float(np.sum(np.asarray(P)[np.arange(strat.n), strat.assignment]))


def assign_constrained(P: np.ndarray, n_min: int, order=None, return_evaluations=False):
    """Greedy single-pass assignment weighted by interim cluster sizes.

    Rows are visited in ``order`` (default natural order).  Each row joins
    the cluster minimising ``P[i, h] * (n_h + 1)``; once the rows still to
    come are only just enough to top every cluster up to ``n_min``, the
    choice is restricted to clusters below the minimum.  Ties go to the
    lowest cluster index.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2:
        raise ValueError("P must be an n x k matrix")
    n, k = P.shape
    _check_feasible(n, k, n_min)
    order = np.arange(n) if order is None else np.asarray(order, dtype=np.int64)
    labels, evals = _backend.assign_constrained(P, n_min, order)
    strat = Stratification(labels, k, n_min)
    return (strat, evals) if return_evaluations else strat


def assign_unweighted(P: np.ndarray, n_min: int) -> Stratification:
    """Exact minimiser of ``sum U * P`` under the same size constraints.

    Solved as a rectangular assignment: each cluster owns ``n_min``
    mandatory columns, the remaining ``n - k * n_min`` columns are free and
    cost the row's cheapest cluster.
    """
    P = np.asarray(P, dtype=np.float64)
    n, k = P.shape
    _check_feasible(n, k, n_min)
    n_free = n - k * n_min
    cost = np.hstack([np.repeat(P, n_min, axis=1), np.repeat(P.min(axis=1, keepdims=True), n_free, axis=1)])
    rows, cols = linear_sum_assignment(cost)
    labels = np.empty(n, dtype=np.int64)
    mandatory = cols < k * n_min
    labels[rows[mandatory]] = cols[mandatory] // max(n_min, 1)
    labels[rows[~mandatory]] = np.argmin(P[rows[~mandatory]], axis=1)
    return Stratification(labels, k, n_min)


def brute_force_assignment(P: np.ndarray, n_min: int, weighted: bool = True) -> tuple[float, Stratification]:
    """Exhaustive minimum over all feasible assignments (tiny inputs only)."""
    P = np.asarray(P, dtype=np.float64)
    n, k = P.shape
    _check_feasible(n, k, n_min)
    best, best_strat = np.inf, None
    for labels in itertools.product(range(k), repeat=n):
        lab = np.array(labels)
        if np.any(np.bincount(lab, minlength=k) < n_min):
            continue
        s = Stratification(lab, k, n_min)
        val = weighted_assignment_objective(P, s) if weighted else unweighted_assignment_objective(P, s)
        if val < best:
            best, best_strat = val, s
    return best, best_strat


def _kernel_dist_to_points(G: np.ndarray, centres: list[int]) -> np.ndarray:
    g = np.diag(G)
    return np.maximum(g[:, None] + g[centres][None, :] - 2.0 * G[:, centres], 0.0)


def kmeans_pp_seeds(G: np.ndarray, k: int, rng: np.random.Generator) -> list[int]:
    n = G.shape[0]
    centres = [int(rng.integers(n))]
    closest = _kernel_dist_to_points(G, centres)[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            remaining = np.setdiff1d(np.arange(n), centres)
            nxt = int(rng.choice(remaining))
        else:
            nxt = int(rng.choice(n, p=closest / total))
        centres.append(nxt)
        closest = np.minimum(closest, _kernel_dist_to_points(G, [nxt])[:, 0])
    return centres


def _repair_empty(G: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    labels = labels.copy()
    for h in range(k):
        sizes = np.bincount(labels, minlength=k)
        if sizes[h]:
            continue
        # farthest point from its own centroid, taken from a cluster that can spare it
        Pd = _partial_distances(G, Stratification(labels, k))
        own = np.where(sizes[labels] > 1, Pd[np.arange(labels.size), labels], -np.inf)
        labels[int(np.argmax(own))] = h
    return labels


def _partial_distances(G: np.ndarray, strat: Stratification) -> np.ndarray:
    sizes = strat.sizes.astype(np.float64)
    safe = np.where(sizes > 0, sizes, 1.0)
    U = np.zeros((strat.n, strat.k))
    U[np.arange(strat.n), strat.assignment] = 1.0
    GU = G @ U
    within = np.einsum("ih,ih->h", U, GU)
    P = np.diag(G)[:, None] - 2.0 * GU / safe + within / safe**2
    P[:, sizes == 0] = np.inf
    return np.maximum(P, 0.0)


def kernel_kmeans(G: np.ndarray, k: int, n_min: int = 1, opts: IterationOptions | None = None,
                  return_result: bool = False):
    """Lloyd-style alternation of centroid distances and constrained assignment.

    Seeds with k-means++ on kernel distances, stops when labels repeat or
    after ``opts.max_iters`` assignment steps, and returns the iterate with
    the lowest size-weighted objective seen.
    """
    opts = opts or IterationOptions()
    G = np.asarray(G, dtype=np.float64)
    n = G.shape[0]
    _check_feasible(n, k, n_min)
    rng = np.random.default_rng(opts.seed)

    def order():
        return rng.permutation(n) if opts.random_row_order else None

    if k == 1:
        strat = Stratification(np.zeros(n, dtype=np.int64), 1, n_min)
        obj = weighted_assignment_objective(centroid_distances(G, strat), strat)
        res = KMeansResult(strat, [obj], 0, True)
        return res if return_result else strat

    seeds = kmeans_pp_seeds(G, k, rng)
    labels = assign_constrained(_kernel_dist_to_points(G, seeds), n_min, order()).assignment
    trace: list[float] = []
    best_obj, best_labels, best_it = np.inf, labels, 0
    converged = False
    for it in range(opts.max_iters):
        if np.any(np.bincount(labels, minlength=k) == 0):
            labels = _repair_empty(G, labels, k)
        strat = Stratification(labels, k, n_min)
        P = centroid_distances(G, strat)
        obj = weighted_assignment_objective(P, strat)
        trace.append(obj)
        if obj < best_obj:
            best_obj, best_labels, best_it = obj, labels, it
        new = assign_constrained(P, n_min, order()).assignment
        if np.array_equal(new, labels):
            converged = True
            break
        labels = new
    else:
        if np.any(np.bincount(labels, minlength=k) == 0):
            labels = _repair_empty(G, labels, k)
        strat = Stratification(labels, k, n_min)
        obj = weighted_assignment_objective(centroid_distances(G, strat), strat)
        trace.append(obj)
        if obj < best_obj:
            best_obj, best_labels, best_it = obj, labels, len(trace) - 1
    result = KMeansResult(Stratification(best_labels, k, n_min), trace, best_it, converged)
    return result if return_result else result.stratification
