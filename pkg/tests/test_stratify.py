import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from batchorder.kernel import KernelSpec, gram
from batchorder.stratify import (
    InfeasibleConstraintError,
    IterationOptions,
    Stratification,
    assign_constrained,
    assign_unweighted,
    brute_force_assignment,
    centroid_distances,
    kernel_kmeans,
    unweighted_assignment_objective,
    weighted_assignment_objective,
)


@st.composite
def assignment_problems(draw, max_n=30, max_k=5):
    k = draw(st.integers(1, max_k))
    n = draw(st.integers(k, max_n))
    n_min = draw(st.integers(0, n // k))
    seed = draw(st.integers(0, 2**32 - 1))
    P = np.random.default_rng(seed).exponential(size=(n, k))
    return P, n_min


def test_minimum_forces_balanced_split(backend):
    P = np.array([[0.0, 9.0]] * 4)
    strat = assign_constrained(P, 2)
    assert strat.sizes.tolist() == [2, 2]
    assert strat.assignment.tolist() == [0, 0, 1, 1]


def test_distinct_row_minima_without_constraint(backend):
    P = np.full((4, 4), 5.0)
    np.fill_diagonal(P, 0.0)
    assert assign_constrained(P, 0).assignment.tolist() == [0, 1, 2, 3]
    assert assign_constrained(P, 1).assignment.tolist() == [0, 1, 2, 3]


def test_ties_go_to_lowest_index(backend):
    P = np.ones((3, 3))
    # interim sizes break the tie after the first point
    assert assign_constrained(P, 0).assignment.tolist() == [0, 1, 2]


def test_row_order_is_respected(backend):
    P = np.array([[0.0, 1.0], [0.0, 5.0]])
    assert assign_constrained(P, 1).assignment.tolist() == [0, 1]
    assert assign_constrained(P, 1, order=[1, 0]).assignment.tolist() == [1, 0]


def test_size_weighting_spills_into_empty_cluster(backend):
    # the 4th row pays 4 * 0.5 in cluster 0 but only 1.9 in the empty cluster
    P = np.array([[0.5, 1.9]] * 4)
    assert assign_constrained(P, 0).assignment.tolist() == [0, 0, 0, 1]


@settings(max_examples=200, deadline=None)
@given(problem=assignment_problems())
def test_constrained_assignment_contract(problem):
    P, n_min = problem
    n, k = P.shape
    strat, evals = assign_constrained(P, n_min, return_evaluations=True)
    assert strat.assignment.shape == (n,)
    assert strat.sizes.sum() == n
    assert strat.sizes.min() >= n_min
    assert evals == n * k


def test_infeasible_minimum_raises():
    with pytest.raises(InfeasibleConstraintError):
        assign_constrained(np.ones((5, 3)), 2)
    with pytest.raises(InfeasibleConstraintError):
        assign_unweighted(np.ones((5, 3)), 2)
    with pytest.raises(InfeasibleConstraintError):
        kernel_kmeans(np.eye(5), 3, 2)


def test_greedy_never_beats_exhaustive_optimum(rng):
    for _ in range(40):
        k = int(rng.integers(1, 4))
        n = int(rng.integers(k, 8))
        n_min = int(rng.integers(0, n // k + 1))
        P = rng.exponential(size=(n, k))
        best, _ = brute_force_assignment(P, n_min)
        greedy = weighted_assignment_objective(P, assign_constrained(P, n_min))
        assert greedy >= best - 1e-12


def lp_unweighted(P, n_min):
    n, k = P.shape
    c = P.ravel()
    A_eq = np.kron(np.eye(n), np.ones(k))
    A_ub = -np.kron(np.ones(n), np.eye(k))
    res = linprog(c, A_ub=A_ub, b_ub=-np.full(k, n_min), A_eq=A_eq, b_eq=np.ones(n), bounds=(0, 1),
                  method="highs")
    return res.fun


@settings(max_examples=60, deadline=None)
@given(problem=assignment_problems(max_n=25, max_k=4))
def test_unweighted_assignment_matches_linear_programme(problem):
    P, n_min = problem
    strat = assign_unweighted(P, n_min)
    assert strat.sizes.min() >= n_min
    assert unweighted_assignment_objective(P, strat) == pytest.approx(lp_unweighted(P, n_min), rel=1e-9)


def test_unweighted_solves_weighted_problem_when_sizes_are_forced(rng):
    # n = k * n_min fixes every cluster size, so both objectives agree up to the factor n_min
    for _ in range(10):
        P = rng.exponential(size=(6, 2))
        best, _ = brute_force_assignment(P, 3)
        assert weighted_assignment_objective(P, assign_unweighted(P, 3)) == pytest.approx(best)


def test_centroid_distances_match_kernel_trick_loops(rng):
    X = rng.normal(size=(12, 2))
    spec = KernelSpec.rbf_mixture([0.3, 2.0])
    G = gram(spec, X)
    strat = Stratification(np.arange(12) % 3, 3)
    P = centroid_distances(G, strat)
    for i in range(12):
        for h in range(3):
            mem = strat.members(h)
            want = G[i, i] - 2 * G[i, mem].mean() + G[np.ix_(mem, mem)].mean()
            assert P[i, h] == pytest.approx(max(want, 0.0), abs=1e-12)
    # linear kernel: plain squared distance to the cluster mean
    G = gram(KernelSpec.linear(), X)
    P = centroid_distances(G, strat)
    means = np.stack([X[strat.members(h)].mean(0) for h in range(3)])
    np.testing.assert_allclose(P, ((X[:, None] - means[None]) ** 2).sum(-1), atol=1e-12)


def test_centroid_distances_reject_empty_stratum():
    with pytest.raises(ValueError):
        centroid_distances(np.eye(3), Stratification([0, 0, 0], 2))


def two_blobs(rng, n=40):
    X = np.vstack([rng.normal(-5, 0.5, (n, 2)), rng.normal(5, 0.5, (n, 2))])
    perm = rng.permutation(2 * n)
    return X[perm], np.repeat([0, 1], n)[perm]


def same_partition(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return all(len(set(b[a == h])) == 1 for h in set(a)) and len(set(a)) == len(set(b))


@pytest.mark.parametrize("spec", [KernelSpec.linear(), KernelSpec.rbf_mixture([0.05])], ids=["linear", "rbf"])
def test_kmeans_recovers_two_blobs(spec, rng, backend):
    X, truth = two_blobs(rng)
    res = kernel_kmeans(gram(spec, X), 2, 5, IterationOptions(seed=1), return_result=True)
    assert same_partition(res.stratification.assignment, truth)
    assert res.converged


def test_kmeans_k1_and_determinism(rng):
    X = rng.normal(size=(30, 2))
    G = gram(KernelSpec.linear(), X)
    assert np.all(kernel_kmeans(G, 1).assignment == 0)
    a = kernel_kmeans(G, 4, 3, IterationOptions(seed=7)).assignment
    b = kernel_kmeans(G, 4, 3, IterationOptions(seed=7)).assignment
    np.testing.assert_array_equal(a, b)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(2, 5), n_min=st.integers(0, 6),
       shuffle=st.booleans())
def test_kmeans_respects_minimum_and_reports_best_iterate(seed, k, n_min, shuffle):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 2))
    G = gram(KernelSpec.linear(), X)
    res = kernel_kmeans(G, k, n_min, IterationOptions(max_iters=20, seed=seed, random_row_order=shuffle),
                        return_result=True)
    strat = res.stratification
    assert strat.sizes.min() >= max(n_min, 1)
    best = weighted_assignment_objective(centroid_distances(G, strat), strat)
    assert best == pytest.approx(min(res.objective_trace))
    assert res.objective_trace[res.best_iteration] == pytest.approx(best)


def test_stratification_roundtrip_and_weights():
    s = Stratification([1, 0, 1, 1], 3, 0)
    assert s.sizes.tolist() == [1, 3, 0]
    assert s.point_weights().tolist() == [3, 1, 3, 3]
    assert Stratification.from_dict(s.to_dict()) == s
    assert Stratification([1, 0, 1, 1], 3, 1) != s
    with pytest.raises(ValueError):
        Stratification([0, 3], 2)
