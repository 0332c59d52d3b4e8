"""Draw per-stratum M-tuples and reorder them into low-error minibatches."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from ._reorder import SOURCE, TARGET, CoralState, ExplicitMMDState, MMDState, StaleCacheError
from .discrepancy import (
    Domain,
    LossKind,
    WeightedBatch,
    as_feature_set,
    batch_estimates,
    explicit_features,
    reference_discrepancy,
)
from .kernel import KernelSpec, prepare_features
from .stratify import Stratification

__all__ = [
    "ReplacementMode",
    "StratumTooSmallError",
    "StaleCacheError",
    "TupleDraw",
    "SchedulePlan",
    "draw_tuples",
    "draw_independent",
    "build_cache",
    "swap_delta",
    "apply_swap",
    "plan_objective",
    "plan_estimates",
    "greedy_reorder",
    "make_schedule",
]


class ReplacementMode(enum.Enum):
    WITHOUT_REPLACEMENT = "without_replacement"
    SHUFFLE_CYCLE = "shuffle_cycle"


class StratumTooSmallError(ValueError):
    pass


def _domain_code(domain) -> int:
    if domain in (SOURCE, TARGET):
        return int(domain)
    return SOURCE if Domain(domain) is Domain.SOURCE else TARGET


@dataclass
class TupleDraw:
    """``tuples[h]`` lists the M indices drawn from stratum ``h``."""

    tuples: np.ndarray
    weights: np.ndarray
    mode: ReplacementMode

    @property
    def k(self) -> int:
        return self.tuples.shape[0]

    @property
    def M(self) -> int:
        return self.tuples.shape[1]


def draw_tuples(strat: Stratification, M: int, mode=ReplacementMode.WITHOUT_REPLACEMENT,
                seed=None) -> TupleDraw:
    """Uniform random M-tuple from every stratum, independent across strata."""
    mode = ReplacementMode(mode)
    if M < 1:
        raise ValueError("M must be at least 1")
    rng = np.random.default_rng(seed)
    out = np.empty((strat.k, M), dtype=np.int64)
    for h in range(strat.k):
        members = strat.members(h)
        if members.size == 0:
            raise StratumTooSmallError(f"stratum {h} is empty")
        if mode is ReplacementMode.WITHOUT_REPLACEMENT:
            if members.size < M:
                raise StratumTooSmallError(
                    f"stratum {h} has {members.size} members < M={M}; "
                    "use shuffle-cycle mode or raise n_min to at least M"
                )
            out[h] = rng.choice(members, size=M, replace=False)
        else:
            reps = -(-M // members.size)
            out[h] = np.concatenate([rng.permutation(members) for _ in range(reps)])[:M]
    return TupleDraw(out, strat.sizes.astype(np.float64), mode)


def draw_independent(strat: Stratification, M: int, rng: np.random.Generator) -> np.ndarray:
    """Plain stratified sampling: a fresh uniform pick per stratum and batch (``k x M``)."""
    out = np.empty((strat.k, M), dtype=np.int64)
    for h in range(strat.k):
        members = strat.members(h)
        out[h] = members[rng.integers(members.size, size=M)]
    return out


@dataclass
class SchedulePlan:
    """M source/target minibatches, one index per stratum each."""

    source_tuples: np.ndarray
    target_tuples: np.ndarray
    source_weights: np.ndarray
    target_weights: np.ndarray
    loss_kind: LossKind = LossKind.MMD
    reference: float = float("nan")
    objective_trace: list[float] = field(default_factory=list)
    initial_objective: float = float("nan")
    final_objective: float = float("nan")
    comparisons: int = 0
    version: int = 0

    def __post_init__(self):
        self.source_tuples = np.array(self.source_tuples, dtype=np.int64, ndmin=2)
        self.target_tuples = np.array(self.target_tuples, dtype=np.int64, ndmin=2)
        self.source_weights = np.asarray(self.source_weights, dtype=np.float64)
        self.target_weights = np.asarray(self.target_weights, dtype=np.float64)
        self.loss_kind = LossKind(self.loss_kind)
        if self.source_tuples.shape[1] != self.target_tuples.shape[1]:
            raise ValueError("source and target tuples must have the same length M")

    @property
    def M(self) -> int:
        return self.source_tuples.shape[1]

    @property
    def k(self) -> int:
        return self.source_tuples.shape[0]

    def tuples(self, domain) -> np.ndarray:
        return self.source_tuples if _domain_code(domain) == SOURCE else self.target_tuples

    @property
    def source_batches(self) -> list[WeightedBatch]:
        return [WeightedBatch(self.source_tuples[:, m], self.source_weights) for m in range(self.M)]

    @property
    def target_batches(self) -> list[WeightedBatch]:
        return [WeightedBatch(self.target_tuples[:, m], self.target_weights) for m in range(self.M)]

    def swap(self, domain, h: int, m: int, m2: int):
        t = self.tuples(domain)
        t[h, m], t[h, m2] = t[h, m2], t[h, m]
        self.version += 1

    def to_dict(self) -> dict:
        return {
            "loss": self.loss_kind.value,
            "M": self.M,
            "k": self.k,
            "reference": self.reference,
            "initial_objective": self.initial_objective,
            "final_objective": self.final_objective,
            "comparisons": self.comparisons,
            "objective_trace": list(self.objective_trace),
            "source_weights": self.source_weights.tolist(),
            "target_weights": self.target_weights.tolist(),
            "source_batches": [b.to_dict() for b in self.source_batches],
            "target_batches": [b.to_dict() for b in self.target_batches],
        }

    @classmethod
    def from_dict(cls, d: dict) -> SchedulePlan:
        src = np.array([b["indices"] for b in d["source_batches"]], dtype=np.int64).T
        tgt = np.array([b["indices"] for b in d["target_batches"]], dtype=np.int64).T
        return cls(
            src, tgt, d["source_weights"], d["target_weights"], LossKind(d["loss"]),
            reference=d.get("reference", float("nan")),
            objective_trace=list(d.get("objective_trace", [])),
            initial_objective=d.get("initial_objective", float("nan")),
            final_objective=d.get("final_objective", float("nan")),
            comparisons=d.get("comparisons", 0),
        )


def _check_plan(plan: SchedulePlan, S, T):
    for name, tup, n in (("source", plan.source_tuples, S.n), ("target", plan.target_tuples, T.n)):
        if tup.size and (tup.min() < 0 or tup.max() >= n):
            raise IndexError(f"{name} plan index out of range for n={n}")


def plan_estimates(plan: SchedulePlan, S, T, spec: KernelSpec) -> np.ndarray:
    S, T = as_feature_set(S), as_feature_set(T, Domain.TARGET)
    _check_plan(plan, S, T)
    return batch_estimates(plan.loss_kind, spec, S, T, plan.source_tuples.T, plan.target_tuples.T,
                           plan.source_weights, plan.target_weights)


def plan_objective(plan: SchedulePlan, S, T, spec: KernelSpec, D0: float) -> float:
    """``sum_m (estimate_m - D0)^2`` recomputed from scratch."""
    est = plan_estimates(plan, S, T, spec)
    return float(np.sum((est - D0) ** 2))


def build_cache(plan: SchedulePlan, S, T, spec: KernelSpec, D0: float, explicit: bool = True):
    """Incremental swap cache for ``plan``; tied to the plan's current version.

    Kernels with a finite feature map get an embedding cache unless
    ``explicit`` is False, in which case the kernel-row cache is used.
    """
    S, T = as_feature_set(S), as_feature_set(T, Domain.TARGET)
    _check_plan(plan, S, T)
    if plan.source_tuples.shape[0] != plan.target_tuples.shape[0]:
        raise ValueError("source and target need the same number of strata")
    k, M = plan.source_tuples.shape
    slots_s = plan.source_tuples.ravel()
    slots_t = plan.target_tuples.ravel()
    pos_s = np.arange(k * M).reshape(k, M)
    pos_t = pos_s + k * M
    if plan.loss_kind is LossKind.MMD:
        X = np.vstack([prepare_features(spec, S.data)[slots_s], prepare_features(spec, T.data)[slots_t]])
        F = explicit_features(spec, X) if explicit else None
        coefs = (plan.source_weights / S.n, plan.target_weights / T.n)
        if F is not None:
            state = ExplicitMMDState(F, pos_s, pos_t, *coefs, D0)
        else:
            state = MMDState(spec, X, pos_s, pos_t, *coefs, D0)
    else:
        state = CoralState(S.data[slots_s], T.data[slots_t], pos_s, pos_t,
                           plan.source_weights, plan.target_weights, S.n, T.n, D0)
    state.slot_index = np.concatenate([slots_s, slots_t])
    state.version = plan.version
    return state


def _sync_tuples(plan: SchedulePlan, state):
    plan.source_tuples = state.slot_index[state.pos[SOURCE]]
    plan.target_tuples = state.slot_index[state.pos[TARGET]]


def swap_delta(plan: SchedulePlan, domain, stratum: int, m: int, m2: int, cache) -> float:
    """Change in the plan objective if positions ``m`` and ``m2`` of one tuple swap."""
    return cache.swap_delta(_domain_code(domain), stratum, m, m2, version=plan.version)


def apply_swap(plan: SchedulePlan, cache, domain, stratum: int, m: int, m2: int):
    if cache.version != plan.version:
        raise StaleCacheError(f"cache at version {cache.version}, plan at {plan.version}")
    cache.apply_swap(_domain_code(domain), stratum, m, m2)
    plan.swap(domain, stratum, m, m2)


def greedy_reorder(draw_s: TupleDraw, draw_t: TupleDraw, S, T, spec: KernelSpec,
                   loss_kind=LossKind.MMD, D0: float | None = None) -> SchedulePlan:
    """Single greedy pass: for each position m and stratum h, swap the source
    element and then the target element at m with whichever later element of
    the same tuple most lowers ``sum_m (estimate_m - D0)^2``.
    """
    S, T = as_feature_set(S), as_feature_set(T, Domain.TARGET)
    loss_kind = LossKind(loss_kind)
    if D0 is None:
        D0 = reference_discrepancy(loss_kind, spec, S, T)
    plan = SchedulePlan(draw_s.tuples.copy(), draw_t.tuples.copy(), draw_s.weights, draw_t.weights,
                        loss_kind, reference=float(D0))
    plan.initial_objective = plan_objective(plan, S, T, spec, D0)
    if plan.M > 1:
        state = build_cache(plan, S, T, spec, D0)
        trace, comps = _backend.greedy_reorder(state)
        _sync_tuples(plan, state)
        plan.objective_trace = trace
        plan.comparisons = comps
        plan.final_objective = plan_objective(plan, S, T, spec, D0)
    else:
        plan.objective_trace = [plan.initial_objective]
        plan.final_objective = plan.initial_objective
    return plan


def make_schedule(strat_s: Stratification, strat_t: Stratification, S, T, M: int,
                  loss_kind=LossKind.MMD, spec: KernelSpec | None = None,
                  mode=ReplacementMode.WITHOUT_REPLACEMENT, seed=None, reorder: bool = True,
                  D0: float | None = None) -> SchedulePlan:
    """Draw tuples for both domains, shuffle them, and (optionally) reorder."""
    spec = spec or KernelSpec.linear()
    ss = np.random.SeedSequence(seed)
    seed_s, seed_t, seed_perm = ss.spawn(3)
    draw_s = draw_tuples(strat_s, M, mode, seed_s)
    draw_t = draw_tuples(strat_t, M, mode, seed_t)
    perm_rng = np.random.default_rng(seed_perm)
    for draw in (draw_s, draw_t):
        for h in range(draw.k):
            draw.tuples[h] = perm_rng.permutation(draw.tuples[h])
    if reorder:
        return greedy_reorder(draw_s, draw_t, S, T, spec, loss_kind, D0)
    S, T = as_feature_set(S), as_feature_set(T, Domain.TARGET)
    if D0 is None:
        D0 = reference_discrepancy(loss_kind, spec, S, T)
    plan = SchedulePlan(draw_s.tuples, draw_t.tuples, draw_s.weights, draw_t.weights, loss_kind,
                        reference=float(D0))
    plan.initial_objective = plan.final_objective = plan_objective(plan, S, T, spec, D0)
    plan.objective_trace = [plan.initial_objective]
    return plan
