"""Monte Carlo harness for estimator-variance and assignment studies."""
from __future__ import annotations

import csv
import enum
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .discrepancy import Domain, FeatureSet, LossKind, batch_estimates, reference_discrepancy
from .kernel import KernelSpec, gram
from .schedule import ReplacementMode, draw_independent, make_schedule, plan_estimates
from .stratify import (
    InfeasibleConstraintError,
    IterationOptions,
    Stratification,
    assign_constrained,
    assign_unweighted,
    kernel_kmeans,
    weighted_assignment_objective,
)

DESK_N = 1000
FULL_N = 4000
DESK_REPLICATES = 200
BOOTSTRAP_RESAMPLES = 1000


class Sampler(enum.Enum):
    UNIFORM = "uniform"
    STRATIFIED = "stratified"
    ORDERED = "ordered"


class Distribution(enum.Enum):
    STANDARD_NORMAL_2D = "standard_normal_2d"
    FROM_FILE = "from_file"


@dataclass
class SimulationConfig:
    n_s: int = DESK_N
    n_t: int = DESK_N
    d: int = 2
    distribution: Distribution = Distribution.STANDARD_NORMAL_2D
    sampler: Sampler = Sampler.ORDERED
    loss_kind: LossKind = LossKind.MMD
    kernel: KernelSpec = field(default_factory=KernelSpec.linear)
    k_values: list[int] = field(default_factory=lambda: [1, 2, 5, 10, 20, 40])
    M: int = 100
    # None: min(M, n // k) per sweep point
    n_min: int | None = None
    replicates: int = DESK_REPLICATES
    seed: int = 0
    source: np.ndarray | None = None
    target: np.ndarray | None = None
    threads: int = 1
    kmeans_iters: int = 100

    def __post_init__(self):
        self.distribution = Distribution(self.distribution)
        self.sampler = Sampler(self.sampler)
        self.loss_kind = LossKind(self.loss_kind)
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if any(int(k) < 1 for k in self.k_values):
            raise ValueError("k values must be at least 1")
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if self.distribution is Distribution.FROM_FILE:
            if self.source is None or self.target is None:
                raise ValueError("from_file distribution needs source and target arrays")
            self.n_s, self.d = np.shape(self.source)
            self.n_t = np.shape(self.target)[0]

    def echo(self) -> dict:
        out = {}
        for key, val in asdict(self).items():
            if key in ("source", "target"):
                continue
            if isinstance(val, enum.Enum):
                val = val.value
            out[key] = val
        out["kernel"] = self.kernel.to_dict()
        return out


@dataclass
class VarianceCurve:
    x_values: list
    variance: list[float]
    stderr: list[float]
    mse: list[float]
    wall_ms: list[float]
    sampler: Sampler
    errors: list[str | None]
    metadata: dict = field(default_factory=dict)

    def rows(self, x_name: str = "x"):
        for i, x in enumerate(self.x_values):
            yield {
                x_name: x,
                "sampler": self.sampler.value,
                "variance": self.variance[i],
                "stderr": self.stderr[i],
                "mse": self.mse[i],
                "wall_ms": self.wall_ms[i],
                "error": self.errors[i] or "",
            }


def make_data(cfg: SimulationConfig) -> tuple[FeatureSet, FeatureSet]:
    if cfg.distribution is Distribution.FROM_FILE:
        return FeatureSet(cfg.source, Domain.SOURCE), FeatureSet(cfg.target, Domain.TARGET)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xDA7A]))
    S = rng.standard_normal((cfg.n_s, cfg.d))
    T = rng.standard_normal((cfg.n_t, cfg.d))
    return FeatureSet(S, Domain.SOURCE), FeatureSet(T, Domain.TARGET)


def _strat_kernel(cfg: SimulationConfig) -> KernelSpec:
    return KernelSpec.coral_map() if cfg.loss_kind is LossKind.CORAL else cfg.kernel


def pooled_stats(per_rep: np.ndarray, d0: float, seed, n_boot: int = BOOTSTRAP_RESAMPLES):
    """Pooled variance and MSE of a ``replicates x M`` estimate table, with
    replicate-level bootstrap standard errors."""
    est = np.asarray(per_rep, dtype=np.float64)
    R, M = est.shape
    s1 = est.sum(axis=1)
    s2 = (est**2).sum(axis=1)
    se = ((est - d0) ** 2).sum(axis=1)

    def var_of(c1, c2, cnt):
        mean = c1 / cnt
        return np.maximum(c2 / cnt - mean**2, 0.0) * cnt / np.maximum(cnt - 1, 1)

    n = R * M
    variance = float(np.var(est, ddof=1)) if n > 1 else 0.0
    mse = float(se.sum() / n)
    if R < 2:
        return variance, float("nan"), mse
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(R, np.full(R, 1.0 / R), size=n_boot).astype(np.float64)
    boot = var_of(counts @ s1, counts @ s2, float(n))
    return variance, float(np.std(boot, ddof=1)), mse


def _stratify(cfg, S, T, k, n_min, cache):
    key = (k, n_min)
    if key not in cache:
        spec = _strat_kernel(cfg)
        out = []
        for i, F in enumerate((S, T)):
            opts = IterationOptions(max_iters=cfg.kmeans_iters, seed=cfg.seed + 7919 * i + k)
            out.append(kernel_kmeans(gram(spec, F.data), k, n_min, opts))
        cache[key] = tuple(out)
    return cache[key]


def _replicate(sampler: Sampler, cfg: SimulationConfig, S, T, k, M, strata, d0, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if sampler is Sampler.UNIFORM:
        if k > S.n or k > T.n:
            raise ValueError(f"k={k} exceeds the dataset size")
        idx_s = np.stack([rng.choice(S.n, k, replace=False) for _ in range(M)])
        idx_t = np.stack([rng.choice(T.n, k, replace=False) for _ in range(M)])
        if cfg.loss_kind is LossKind.CORAL:
            if k < 2:
                raise ValueError("uniform CORAL needs k >= 2")
            cs = np.stack([np.cov(S.data[i], rowvar=False, ddof=1).reshape(S.d, S.d) for i in idx_s])
            ct = np.stack([np.cov(T.data[i], rowvar=False, ddof=1).reshape(T.d, T.d) for i in idx_t])
            return np.sum((cs - ct) ** 2, axis=(1, 2))
        return batch_estimates(cfg.loss_kind, cfg.kernel, S, T, idx_s, idx_t, S.n / k, T.n / k)
    ss, st = strata
    if sampler is Sampler.STRATIFIED:
        idx_s = draw_independent(ss, M, rng).T
        idx_t = draw_independent(st, M, rng).T
        return batch_estimates(cfg.loss_kind, cfg.kernel, S, T, idx_s, idx_t, ss.sizes, st.sizes)
    small = min(ss.sizes.min(), st.sizes.min()) < M
    mode = ReplacementMode.SHUFFLE_CYCLE if small else ReplacementMode.WITHOUT_REPLACEMENT
    plan = make_schedule(ss, st, S, T, M, cfg.loss_kind, cfg.kernel, mode,
                         seed=int(rng.integers(2**63)), D0=d0)
    return plan_estimates(plan, S, T, cfg.kernel)


def _run_point(sampler, cfg, S, T, k, M, d0, strat_cache, point_seed):
    t0 = time.perf_counter()
    n_min = min(M, S.n // k, T.n // k) if cfg.n_min is None else cfg.n_min
    strata = None
    if sampler is not Sampler.UNIFORM:
        strata = _stratify(cfg, S, T, k, n_min, strat_cache)
    seeds = np.random.SeedSequence(point_seed).spawn(cfg.replicates)

    def one(s):
        return _replicate(sampler, cfg, S, T, k, M, strata, d0, s)

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            per_rep = list(ex.map(one, seeds))
    else:
        per_rep = [one(s) for s in seeds]
    stats = pooled_stats(np.stack(per_rep), d0, np.random.SeedSequence([point_seed[0], 0xB007]))
    return stats, (time.perf_counter() - t0) * 1e3


def _sweep(cfg: SimulationConfig, xs, sampler: Sampler, which: str, data=None, strat_cache=None):
    S, T = data or make_data(cfg)
    d0 = reference_discrepancy(cfg.loss_kind, cfg.kernel, S, T)
    strat_cache = {} if strat_cache is None else strat_cache
    var, se, mse, wall, errs = [], [], [], [], []
    code = list(Sampler).index(sampler)
    for i, x in enumerate(xs):
        k, M = (x, cfg.M) if which == "k" else (cfg.k_values[0], x)
        try:
            (v, s, e), ms = _run_point(sampler, cfg, S, T, int(k), int(M), d0, strat_cache,
                                      [cfg.seed, code, i, int(x)])
            err = None
        except (InfeasibleConstraintError, ValueError) as exc:
            v = s = e = ms = float("nan")
            err = str(exc)
        var.append(v)
        se.append(s)
        mse.append(e)
        wall.append(ms)
        errs.append(err)
    meta = cfg.echo() | {"sweep": which, "reference": d0}
    return VarianceCurve(list(xs), var, se, mse, wall, sampler, errs, meta)


def run_variance_sweep(cfg: SimulationConfig, data=None, strat_cache=None) -> VarianceCurve:
    """Pooled estimator variance of ``cfg.sampler`` for every k in ``cfg.k_values``.

    The dataset is fixed for the sweep; each replicate re-runs only the
    sampling randomness.
    """
    return _sweep(cfg, list(cfg.k_values), cfg.sampler, "k", data, strat_cache)


def run_m_sweep(cfg: SimulationConfig, M_values=(1, 2, 5, 10, 25, 50, 75, 100), data=None,
                strat_cache=None) -> VarianceCurve:
    """Variance against the reordering block length M at ``k = cfg.k_values[0]``."""
    return _sweep(cfg, list(M_values), cfg.sampler, "M", data, strat_cache)


def compare_samplers(cfg: SimulationConfig, samplers=tuple(Sampler)) -> list[VarianceCurve]:
    data = make_data(cfg)
    cache: dict = {}
    out = []
    for s in samplers:
        c = SimulationConfig(**{**cfg.__dict__, "sampler": s})
        out.append(run_variance_sweep(c, data, cache))
    return out


def nmin_problem(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Euclidean distances from ``n`` standard-normal 2D samples to ``k`` more."""
    X = rng.standard_normal((n, 2))
    A = rng.standard_normal((k, 2))
    return np.sqrt(np.sum((X[:, None, :] - A[None, :, :]) ** 2, axis=-1))


ASSIGNERS = {"greedy": assign_constrained, "unweighted": assign_unweighted}


def run_nmin_sweep(n: int = 200, k: int = 5, n_min_values=(1, 5, 10, 20, 30, 40),
                   assigners=("greedy", "unweighted"), seed: int = 0, replicates: int = 20) -> list[dict]:
    """Size-weighted assignment objective against ``n_min`` for each assigner,
    averaged over ``replicates`` random problems (one fixed P each)."""
    problems = [nmin_problem(n, k, np.random.default_rng([seed, r])) for r in range(replicates)]
    rows = []
    for name in assigners:
        fn = ASSIGNERS[name]
        for n_min in n_min_values:
            if n < k * n_min:
                rows.append({"n_min": n_min, "assigner": name, "objective": float("nan"),
                             "stderr": float("nan"), "error": f"infeasible: n={n} < k*n_min={k * n_min}"})
                continue
            vals = np.array([weighted_assignment_objective(P, fn(P, n_min)) for P in problems])
            se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else float("nan")
            rows.append({"n_min": n_min, "assigner": name, "objective": float(vals.mean()),
                         "stderr": se, "error": ""})
    return rows


def _fmt(v):
    if isinstance(v, float):
        return "" if np.isnan(v) else repr(v)
    return v


def write_csv(rows, fieldnames, fh, timing: bool = True):
    w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        r = dict(r)
        if not timing and "wall_ms" in r:
            r["wall_ms"] = ""
        w.writerow({k: _fmt(v) for k, v in r.items()})


def curves_to_csv(curves, x_name="x", timing: bool = True) -> str:
    buf = io.StringIO()
    rows = [r for c in curves for r in c.rows(x_name)]
    write_csv(rows, [x_name, "sampler", "variance", "stderr", "mse", "wall_ms", "error"], buf, timing)
    return buf.getvalue()


def metadata_json(obj: dict) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, enum.Enum):
        return o.value
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")
