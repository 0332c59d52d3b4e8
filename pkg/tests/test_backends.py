import subprocess
import sys

import numpy as np
import pytest

from batchorder import _backend
from batchorder.discrepancy import LossKind
from batchorder.kernel import KernelSpec
from batchorder.schedule import make_schedule
from batchorder.stratify import Stratification, assign_constrained

compiled_only = pytest.mark.skipif("compiled" not in _backend.BACKENDS, reason="extension not built")


def with_backend(name, fn, *args, **kw):
    prev = _backend.set_backend(name)
    try:
        return fn(*args, **kw)
    finally:
        _backend.set_backend(prev)


@compiled_only
def test_assignment_backends_agree(rng):
    for _ in range(200):
        k = int(rng.integers(1, 8))
        n = int(rng.integers(k, 120))
        n_min = int(rng.integers(0, n // k + 1))
        P = rng.exponential(size=(n, k))
        if rng.random() < 0.3:
            P = np.round(P, 1)  # force ties
        order = rng.permutation(n)
        a, ea = with_backend("compiled", assign_constrained, P, n_min, order, return_evaluations=True)
        b, eb = with_backend("python", assign_constrained, P, n_min, order, return_evaluations=True)
        np.testing.assert_array_equal(a.assignment, b.assignment)
        assert ea == eb == n * k


@compiled_only
@pytest.mark.parametrize("loss,spec", [
    (LossKind.MMD, KernelSpec.linear()),
    (LossKind.MMD, KernelSpec.rbf_mixture()),
    (LossKind.MMD, KernelSpec.coral_map()),
    (LossKind.CORAL, KernelSpec.linear()),
], ids=["mmd-linear", "mmd-rbf", "mmd-coralmap", "coral"])
def test_reorder_backends_agree(loss, spec, rng):
    for _ in range(5):
        k, M, d = int(rng.integers(1, 6)), int(rng.integers(2, 25)), int(rng.integers(1, 4))
        n = k * M + 10
        labels = np.concatenate([np.repeat(np.arange(k), M), rng.integers(0, k, 10)])
        ss, st = Stratification(rng.permutation(labels), k), Stratification(rng.permutation(labels), k)
        S, T = rng.normal(size=(n, d)), rng.normal(size=(n, d)) + 0.2
        seed = int(rng.integers(1 << 30))
        a = with_backend("compiled", make_schedule, ss, st, S, T, M, loss, spec, seed=seed)
        b = with_backend("python", make_schedule, ss, st, S, T, M, loss, spec, seed=seed)
        np.testing.assert_array_equal(a.source_tuples, b.source_tuples)
        np.testing.assert_array_equal(a.target_tuples, b.target_tuples)
        assert a.comparisons == b.comparisons == k * M * (M - 1)
        assert a.final_objective == b.final_objective
        np.testing.assert_allclose(a.objective_trace, b.objective_trace, rtol=1e-9, atol=1e-15)


def test_set_backend_validates_name():
    with pytest.raises(ValueError):
        _backend.set_backend("gpu")


def test_python_fallback_selected_when_extension_missing():
    code = ("import sys; sys.modules['batchorder._core'] = None\n"
            "import batchorder\n"
            "print(batchorder.BACKENDS, batchorder.active_backend())")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "('python',) python"
