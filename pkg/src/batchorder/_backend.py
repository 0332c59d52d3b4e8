"""Pick the compiled core when it is importable, else the pure-Python loops."""
from __future__ import annotations

import numpy as np

from . import _fallback
from ._reorder import SOURCE, TARGET, CoralState, ExplicitMMDState, MMDState

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

BACKENDS = ("compiled", "python") if _core is not None else ("python",)
_active = BACKENDS[0]


def active() -> str:
    return _active


def set_backend(name: str) -> str:
    """Select ``"compiled"`` or ``"python"``; returns the previous choice."""
    global _active
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; choose from {BACKENDS}")
    prev, _active = _active, name
    return prev


def assign_constrained(P: np.ndarray, n_min: int, order: np.ndarray):
    P = np.ascontiguousarray(P, dtype=np.float64)
    order = np.ascontiguousarray(order, dtype=np.int64)
    if _active == "compiled":
        return _core.assign_constrained(P, int(n_min), order)
    return _fallback.assign_constrained(P, int(n_min), order)


def greedy_reorder(state) -> tuple[list[float], int]:
    """Run the greedy swap pass in place on a swap cache from ``_reorder``."""
    if _active == "python":
        return _fallback.greedy_reorder(state)
    if isinstance(state, ExplicitMMDState):
        trace, comps = _core.greedy_mmd_explicit(
            state.F, state.pos[SOURCE], state.pos[TARGET], state.coef[SOURCE], state.coef[TARGET],
            state.E, state.D, state.d0,
        )
    elif isinstance(state, MMDState):
        trace, comps = _core.greedy_mmd(
            state.X, state.spec.code, np.asarray(state.spec.gammas, dtype=np.float64),
            state.pos[SOURCE], state.pos[TARGET], state.coef[SOURCE], state.coef[TARGET],
            state.Q, state.D, state.diag, state.d0,
        )
    elif isinstance(state, CoralState):
        M, d = state.s1[SOURCE].shape
        flat = [np.ascontiguousarray(a.reshape(M, d * d)) for a in
                (state.s2[SOURCE], state.C[SOURCE], state.s2[TARGET], state.C[TARGET])]
        trace, comps = _core.greedy_coral(
            state.Xs, state.Xt, state.pos[SOURCE], state.pos[TARGET], state.offset[TARGET],
            state.w[SOURCE], state.w[TARGET], float(state.n[SOURCE]), float(state.n[TARGET]),
            state.s1[SOURCE], flat[0], flat[1], state.s1[TARGET], flat[2], flat[3],
            state.D, state.d0,
        )
        state.s2[SOURCE][...] = flat[0].reshape(M, d, d)
        state.C[SOURCE][...] = flat[1].reshape(M, d, d)
        state.s2[TARGET][...] = flat[2].reshape(M, d, d)
        state.C[TARGET][...] = flat[3].reshape(M, d, d)
    else:
        raise TypeError(f"unsupported state {type(state).__name__}")
    state.version += len(trace) - 1
    return list(trace), int(comps)
