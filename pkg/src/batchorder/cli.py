"""Command-line front end: stratify, schedule, estimate, simulate.

Exit codes: 0 success, 1 runtime failure, 2 bad input or failed validation.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import struct
import sys
from pathlib import Path

import numpy as np

from . import simulate as sim
from .discrepancy import Domain, FeatureSet, LossKind, discrepancy_report
from .kernel import DEFAULT_GAMMAS, KernelSpec, gram
from .schedule import ReplacementMode, SchedulePlan, StratumTooSmallError, make_schedule
from .stratify import InfeasibleConstraintError, IterationOptions, Stratification, kernel_kmeans

SCHEMA_VERSION = 1
BINARY_MAGIC = b"BOFEAT01"
_HEADER = struct.Struct("<8sQQ")


class InputError(ValueError):
    """Problem with user-supplied files or flags (exit code 2)."""


# ---------------------------------------------------------------- file formats

def write_binary_features(path, X) -> None:
    """Binary feature file: magic, n and d as little-endian u64, then row-major f64."""
    X = np.ascontiguousarray(X, dtype="<f8")
    if X.ndim != 2:
        raise ValueError("features must be a 2-d array")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(BINARY_MAGIC, X.shape[0], X.shape[1]))
        fh.write(X.tobytes())


def _read_binary(path: Path, raw: bytes) -> np.ndarray:
    if len(raw) < _HEADER.size:
        raise InputError(f"{path}: truncated binary header")
    _, n, d = _HEADER.unpack_from(raw)
    body = raw[_HEADER.size:]
    if len(body) != 8 * n * d:
        raise InputError(f"{path}: header declares {n}x{d} values but body holds {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").reshape(n, d).astype(np.float64)


def _read_csv(path: Path, text: str) -> np.ndarray:
    rows = []
    width = None
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-numeric value in row {row!r}") from None
        if not all(np.isfinite(vals)):
            raise InputError(f"{path}:{lineno}: non-finite value")
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise InputError(f"{path}:{lineno}: expected {width} columns, found {len(vals)}")
        rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64)


def read_features(path) -> np.ndarray:
    """Headerless CSV (one example per row) or the binary variant, chosen by magic bytes."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    if raw.startswith(BINARY_MAGIC):
        return _read_binary(path, raw)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise InputError(f"{path}: neither UTF-8 CSV nor a binary feature file") from None
    return _read_csv(path, text)


def _dump(obj: dict, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=sim._json_default) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _load_json(path, kind: str) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(d, dict) or d.get("kind") != kind:
        raise InputError(f"{path}: not a {kind} file")
    ver = d.get("schema_version")
    if ver != SCHEMA_VERSION:
        raise InputError(f"{path}: unsupported schema_version {ver!r} (expected {SCHEMA_VERSION})")
    return d


def load_stratification(path, n: int | None = None) -> Stratification:
    d = _load_json(path, "stratification")
    try:
        strat = Stratification.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed stratification ({exc})") from None
    if n is not None and strat.n != n:
        raise InputError(f"{path}: stratification covers {strat.n} points, features have {n}")
    return strat


def load_plan(path) -> SchedulePlan:
    d = _load_json(path, "plan")
    try:
        return SchedulePlan.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed plan ({exc})") from None


# ---------------------------------------------------------------- argument handling

def _kernel_from_args(args) -> KernelSpec:
    if args.kernel == "linear":
        return KernelSpec.linear()
    if args.kernel == "coral":
        return KernelSpec.coral_map()
    return KernelSpec.rbf_mixture(args.gammas or DEFAULT_GAMMAS)


def _add_kernel_flags(p):
    p.add_argument("--kernel", choices=["linear", "rbf", "coral"], default="linear")
    p.add_argument("--gammas", type=float, nargs="+", help="RBF mixture bandwidths")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _common_flags(suppress: bool) -> argparse.ArgumentParser:
    # accepted both before and after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    dflt = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=dflt(0))
    p.add_argument("--threads", type=int, default=dflt(None),
                   help="worker threads for replicate-level parallelism (default: all CPUs)")
    p.add_argument("--paper-scale", action="store_true", default=dflt(False),
                   help="n_s = n_t = 4000 instead of the desk-scale 1000")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="batchorder", parents=[_common_flags(False)],
                                     description="Stratified, reordered minibatch schedules for "
                                                 "low-variance domain-discrepancy estimates.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_flags(True)

    p = sub.add_parser("stratify", parents=[common], help="kernel k-means with a minimum cluster size")
    p.add_argument("features")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--n-min", type=int, default=1)
    p.add_argument("--max-iters", type=int, default=100)
    _add_kernel_flags(p)
    p.add_argument("--out", "-o", default="-")

    p = sub.add_parser("schedule", parents=[common], help="draw and reorder M minibatches")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--strat-source", required=True)
    p.add_argument("--strat-target", required=True)
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--loss", choices=[k.value for k in LossKind], default="mmd")
    p.add_argument("--shuffle-cycle", action="store_true",
                   help="allow strata smaller than M by cycling reshuffled copies")
    p.add_argument("--no-reorder", action="store_true")
    _add_kernel_flags(p)
    p.add_argument("--out", "-o", default="-")

    p = sub.add_parser("estimate", parents=[common], help="per-batch estimates for a plan")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--loss", choices=[k.value for k in LossKind], default=None,
                   help="defaults to the loss recorded in the plan")
    _add_kernel_flags(p)
    p.add_argument("--out", "-o", default="-")

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo variance studies")
    p.add_argument("--figure", choices=["2", "3a", "3b"], required=True)
    p.add_argument("--desk-scale", action="store_true", help="n_s = n_t = 1000 (default)")
    p.add_argument("--config", help="JSON file of simulation settings; flags override it")
    p.add_argument("--source", help="feature file replacing the synthetic source data")
    p.add_argument("--target", help="feature file replacing the synthetic target data")
    p.add_argument("--n", type=int, help="override n_s = n_t")
    p.add_argument("--replicates", type=int)
    p.add_argument("--k-values", type=_int_list)
    p.add_argument("--M", type=int)
    p.add_argument("--M-values", type=_int_list)
    p.add_argument("--n-min", type=int)
    p.add_argument("--n-min-values", type=_int_list)
    p.add_argument("--loss", choices=[k.value for k in LossKind])
    p.add_argument("--samplers", type=lambda s: [sim.Sampler(v) for v in s.split(",")])
    p.add_argument("--timing", action="store_true", help="record wall-clock ms (breaks byte reproducibility)")
    _add_kernel_flags(p)
    p.add_argument("--out", "-o", required=True, help="CSV path; metadata goes to <out>.json")
    return parser


def _threads(args) -> int:
    return args.threads if args.threads else (os.cpu_count() or 1)


# ---------------------------------------------------------------- subcommands

def cmd_stratify(args) -> int:
    X = read_features(args.features)
    spec = _kernel_from_args(args)
    opts = IterationOptions(max_iters=args.max_iters, seed=args.seed)
    res = kernel_kmeans(gram(spec, X), args.k, args.n_min, opts, return_result=True)
    out = {"schema_version": SCHEMA_VERSION, "kind": "stratification", "kernel": spec.to_dict(),
           "seed": args.seed, "objective_trace": res.objective_trace,
           "best_iteration": res.best_iteration, "converged": res.converged}
    out.update(res.stratification.to_dict())
    _dump(out, args.out)
    return 0


def cmd_schedule(args) -> int:
    S = FeatureSet(read_features(args.source), Domain.SOURCE)
    T = FeatureSet(read_features(args.target), Domain.TARGET)
    if S.d != T.d:
        raise InputError(f"source has {S.d} features, target has {T.d}")
    ss = load_stratification(args.strat_source, S.n)
    st = load_stratification(args.strat_target, T.n)
    if ss.k != st.k:
        raise InputError(f"source has {ss.k} strata, target has {st.k}")
    mode = ReplacementMode.SHUFFLE_CYCLE if args.shuffle_cycle else ReplacementMode.WITHOUT_REPLACEMENT
    spec = _kernel_from_args(args)
    plan = make_schedule(ss, st, S, T, args.M, LossKind(args.loss), spec, mode, seed=args.seed,
                         reorder=not args.no_reorder)
    out = {"schema_version": SCHEMA_VERSION, "kind": "plan", "kernel": spec.to_dict(),
           "seed": args.seed, "mode": mode.value}
    out.update(plan.to_dict())
    _dump(out, args.out)
    return 0


def cmd_estimate(args) -> int:
    S = FeatureSet(read_features(args.source), Domain.SOURCE)
    T = FeatureSet(read_features(args.target), Domain.TARGET)
    plan = load_plan(args.plan)
    loss = LossKind(args.loss) if args.loss else plan.loss_kind
    for name, tup, n in (("source", plan.source_tuples, S.n), ("target", plan.target_tuples, T.n)):
        if tup.size and (tup.min() < 0 or tup.max() >= n):
            raise InputError(f"plan {name} index out of range for {n} examples")
    spec = _kernel_from_args(args)
    rep = discrepancy_report(loss, spec, S, T, plan.source_batches, plan.target_batches)
    out = {"schema_version": SCHEMA_VERSION, "kind": "report", "loss": loss.value,
           "kernel": spec.to_dict(), "M": plan.M}
    out.update(rep.to_dict())
    _dump(out, args.out)
    return 0


def _sim_config(args) -> sim.SimulationConfig:
    cfg_kw: dict = {}
    if args.config:
        try:
            cfg_kw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot load config {args.config}: {exc}") from None
        if not isinstance(cfg_kw, dict):
            raise InputError(f"{args.config}: config must be a JSON object")
        if "kernel" in cfg_kw:
            cfg_kw["kernel"] = KernelSpec.from_dict(cfg_kw["kernel"])
    n = sim.FULL_N if args.paper_scale else sim.DESK_N
    cfg_kw.setdefault("n_s", n)
    cfg_kw.setdefault("n_t", n)
    if args.n is not None:
        cfg_kw["n_s"] = cfg_kw["n_t"] = args.n
    if args.figure == "3b":
        cfg_kw.setdefault("k_values", [20])
    for key in ("replicates", "M", "n_min", "k_values"):
        if getattr(args, key) is not None:
            cfg_kw[key] = getattr(args, key)
    if args.loss:
        cfg_kw["loss_kind"] = args.loss
    if args.kernel != "linear" or "kernel" not in cfg_kw:
        cfg_kw["kernel"] = _kernel_from_args(args)
    if args.source or args.target:
        if not (args.source and args.target):
            raise InputError("--source and --target must be given together")
        cfg_kw["distribution"] = sim.Distribution.FROM_FILE
        cfg_kw["source"] = read_features(args.source)
        cfg_kw["target"] = read_features(args.target)
    cfg_kw["seed"] = args.seed
    cfg_kw["threads"] = _threads(args)
    try:
        return sim.SimulationConfig(**cfg_kw)
    except TypeError as exc:
        raise InputError(f"bad simulation setting: {exc}") from None


def cmd_simulate(args) -> int:
    out = Path(args.out)
    meta: dict = {"figure": args.figure, "schema_version": SCHEMA_VERSION}
    if args.figure == "2":
        n = args.n or 200
        k = (args.k_values or [5])[0]
        nmins = args.n_min_values or [1, 5, 10, 20, 30, 40]
        reps = args.replicates or 20
        rows = sim.run_nmin_sweep(n, k, nmins, seed=args.seed, replicates=reps)
        wide = {}
        for r in rows:
            w = wide.setdefault(r["n_min"], {"n_min": r["n_min"], "error": r["error"]})
            w[r["assigner"]] = r["objective"]
            w[r["assigner"] + "_stderr"] = r["stderr"]
        with open(out, "w", newline="") as fh:
            sim.write_csv(wide.values(), ["n_min", "greedy", "greedy_stderr", "unweighted",
                                          "unweighted_stderr", "error"], fh)
        meta["config"] = {"n": n, "k": k, "n_min_values": nmins, "replicates": reps, "seed": args.seed}
    else:
        cfg = _sim_config(args)
        if args.figure == "3a":
            curves = sim.compare_samplers(cfg, args.samplers or tuple(sim.Sampler))
            text = sim.curves_to_csv(curves, "k", timing=args.timing)
        else:
            cfg.sampler = sim.Sampler.ORDERED
            curves = [sim.run_m_sweep(cfg, args.M_values or (2, 5, 10, 25, 50, 75, 100))]
            text = sim.curves_to_csv(curves, "M", timing=args.timing)
        out.write_text(text)
        meta["config"] = cfg.echo()
        meta["config"].pop("threads")
        meta["reference"] = curves[0].metadata["reference"]
    Path(str(out) + ".json").write_text(sim.metadata_json(meta))
    return 0


COMMANDS = {"stratify": cmd_stratify, "schedule": cmd_schedule, "estimate": cmd_estimate,
            "simulate": cmd_simulate}

# failures that trace back to the inputs rather than to the computation
INPUT_ERRORS = (InputError, InfeasibleConstraintError, StratumTooSmallError, IndexError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except INPUT_ERRORS as exc:
        print(f"batchorder: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"batchorder: invalid input: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"batchorder: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
