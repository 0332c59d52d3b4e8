import math

import numpy as np
import pytest

from batchorder.discrepancy import LossKind
from batchorder.simulate import (
    Distribution,
    Sampler,
    SimulationConfig,
    compare_samplers,
    curves_to_csv,
    metadata_json,
    nmin_problem,
    pooled_stats,
    run_m_sweep,
    run_nmin_sweep,
    run_variance_sweep,
)


def small(**kw):
    base = dict(n_s=200, n_t=200, k_values=[2, 5], M=10, replicates=8, seed=3)
    base.update(kw)
    return SimulationConfig(**base)


def gap_sigmas(lo, hi, i):
    return (hi.variance[i] - lo.variance[i]) / math.hypot(hi.stderr[i], lo.stderr[i])


def test_pooled_stats():
    est = np.random.default_rng(0).normal(size=(20, 7))
    v, se, mse = pooled_stats(est, 0.5, seed=1)
    assert v == pytest.approx(np.var(est, ddof=1))
    assert mse == pytest.approx(np.mean((est - 0.5) ** 2))
    assert se > 0 and pooled_stats(est, 0.5, seed=1)[1] == se
    v1, se1, _ = pooled_stats(est[:1], 0.0, seed=1)
    assert math.isnan(se1) and v1 == pytest.approx(np.var(est[0], ddof=1))


def test_uniform_full_batch_has_zero_variance():
    cfg = small(n_s=30, n_t=30, k_values=[30], M=4, sampler=Sampler.UNIFORM)
    curve = run_variance_sweep(cfg)
    assert curve.variance[0] == pytest.approx(0.0, abs=1e-24)
    assert curve.mse[0] == pytest.approx(0.0, abs=1e-24)


def test_infeasible_points_are_marked_and_sweep_continues():
    cfg = small(k_values=[2, 50], n_min=10, sampler=Sampler.STRATIFIED)
    curve = run_variance_sweep(cfg)
    assert curve.errors[0] is None and curve.variance[0] >= 0
    assert "cannot fill" in curve.errors[1] and math.isnan(curve.variance[1])
    uni = run_variance_sweep(small(k_values=[2, 500], sampler=Sampler.UNIFORM))
    assert uni.errors[1] and uni.errors[0] is None


def test_identical_config_gives_identical_csv():
    a = curves_to_csv(compare_samplers(small()), "k", timing=False)
    b = curves_to_csv(compare_samplers(small()), "k", timing=False)
    assert a == b
    assert a.splitlines()[0] == "k,sampler,variance,stderr,mse,wall_ms,error"
    assert len(a.splitlines()) == 1 + 3 * 2


def test_threads_do_not_change_results():
    a = run_variance_sweep(small(threads=1))
    b = run_variance_sweep(small(threads=3))
    assert a.variance == b.variance and a.stderr == b.stderr


def test_variance_ordering_small_scale():
    cfg = small(n_s=400, n_t=400, k_values=[2, 5, 10], M=20, replicates=40)
    uni, strat, ordered = compare_samplers(cfg)
    for i in range(3):
        assert gap_sigmas(strat, uni, i) > 3
        assert gap_sigmas(ordered, strat, i) > 3


def test_single_batch_ordered_matches_stratified():
    # no reordering freedom with M = 1, so both samplers have the same distribution
    cfg = small(k_values=[5], replicates=400)
    o = run_m_sweep(SimulationConfig(**{**cfg.__dict__, "sampler": Sampler.ORDERED}), M_values=[1])
    s = run_m_sweep(SimulationConfig(**{**cfg.__dict__, "sampler": Sampler.STRATIFIED}), M_values=[1])
    assert abs(gap_sigmas(o, s, 0)) < 3


def test_m_sweep_and_metadata():
    curve = run_m_sweep(small(k_values=[5]), M_values=[1, 2, 10])
    assert curve.x_values == [1, 2, 10]
    assert all(v >= 0 for v in curve.variance)
    text = metadata_json(curve.metadata)
    assert '"sweep": "M"' in text and '"kind": "linear"' in text


def test_coral_and_file_inputs():
    rng = np.random.default_rng(1)
    cfg = small(loss_kind=LossKind.CORAL, distribution=Distribution.FROM_FILE,
                source=rng.normal(size=(150, 2)), target=rng.normal(size=(120, 2)) * 2)
    assert cfg.n_s == 150 and cfg.n_t == 120
    for curve in compare_samplers(cfg):
        assert all(e is None for e in curve.errors)
        assert all(np.isfinite(curve.variance))


def test_config_validation():
    with pytest.raises(ValueError):
        SimulationConfig(replicates=0)
    with pytest.raises(ValueError):
        SimulationConfig(k_values=[0, 2])
    with pytest.raises(ValueError):
        SimulationConfig(distribution=Distribution.FROM_FILE)


def test_nmin_problem_shape_and_distances():
    P = nmin_problem(30, 4, np.random.default_rng(0))
    assert P.shape == (30, 4) and np.all(P >= 0)


def test_nmin_sweep_rows():
    rows = run_nmin_sweep(n=60, k=3, n_min_values=[1, 20, 25], seed=2, replicates=4)
    again = run_nmin_sweep(n=60, k=3, n_min_values=[1, 20, 25], seed=2, replicates=4)
    assert repr(rows) == repr(again)
    by = {(r["assigner"], r["n_min"]): r for r in rows}
    assert by[("greedy", 1)]["objective"] <= by[("greedy", 20)]["objective"]
    assert by[("greedy", 25)]["error"] and math.isnan(by[("greedy", 25)]["objective"])
