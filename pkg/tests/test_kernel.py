import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from batchorder.kernel import (
    DEFAULT_GAMMAS,
    KernelKind,
    KernelSpec,
    coral_map,
    eval_kernel,
    gram,
    kernel_diag,
    prepare_features,
    raw_gram,
)

SPECS = [KernelSpec.linear(), KernelSpec.rbf_mixture(), KernelSpec.rbf_mixture([0.5]), KernelSpec.coral_map()]

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def naive_gram(spec, A, B):
    return np.array([[eval_kernel(spec, a, b) for b in B] for a in A])


def test_rbf_single_bandwidth_frozen_value():
    spec = KernelSpec.rbf_mixture([1.0])
    assert eval_kernel(spec, [0.0, 0.0], [1.0, 0.0]) == pytest.approx(np.exp(-1.0), rel=1e-15)


def test_rbf_mixture_sums_bandwidths():
    spec = KernelSpec.rbf_mixture()
    expected = sum(np.exp(-g * 4.0) for g in DEFAULT_GAMMAS)
    assert eval_kernel(spec, [0.0, 0.0], [0.0, 2.0]) == pytest.approx(expected, rel=1e-14)
    assert eval_kernel(spec, [3.0, 1.0], [3.0, 1.0]) == pytest.approx(len(DEFAULT_GAMMAS))


def test_linear_and_coral_map_values():
    assert eval_kernel(KernelSpec.linear(), [1, 2], [3, -1]) == 1.0
    # features are already centred when passed to the CORAL map kernel
    assert eval_kernel(KernelSpec.coral_map(), [1, 2], [3, -1]) == 1.0
    m = coral_map([1.0, 2.0], [0.0, 1.0])
    np.testing.assert_array_equal(m, [[1.0, 1.0], [1.0, 1.0]])


def test_coral_map_kernel_equals_outer_product_inner_product(rng):
    A = rng.normal(size=(6, 3))
    B = rng.normal(size=(5, 3))
    G = gram(KernelSpec.coral_map(), A, B)
    ca, cb = A - A.mean(0), B - B.mean(0)
    explicit = np.array([[np.sum(np.outer(a, a) * np.outer(b, b)) for b in cb] for a in ca])
    np.testing.assert_allclose(G, explicit, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind.value + str(len(s.gammas)))
def test_gram_matches_pairwise_loop(spec, rng):
    A = rng.normal(size=(7, 3))
    B = rng.normal(size=(4, 3))
    np.testing.assert_allclose(raw_gram(spec, A, B), naive_gram(spec, A, B), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(kernel_diag(spec, A), np.diag(naive_gram(spec, A, A)), rtol=1e-12)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind.value + str(len(s.gammas)))
@settings(max_examples=40, deadline=None)
@given(X=arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 4)), elements=finite))
def test_gram_is_symmetric_psd(spec, X):
    G = gram(spec, X)
    np.testing.assert_array_equal(G, G.T)
    scale = max(1.0, float(np.abs(G).max()))
    assert np.linalg.eigvalsh(G).min() >= -1e-9 * scale * G.shape[0]


def test_prepare_features_centres_only_for_coral_map(rng):
    X = rng.normal(size=(10, 2)) + 5
    np.testing.assert_array_equal(prepare_features(KernelSpec.linear(), X), X)
    np.testing.assert_allclose(prepare_features(KernelSpec.coral_map(), X).mean(0), 0, atol=1e-12)


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        eval_kernel(KernelSpec.linear(), [1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        gram(KernelSpec.rbf_mixture(), np.zeros((3, 2)), np.zeros((3, 3)))


def test_spec_validation_and_roundtrip():
    with pytest.raises(ValueError):
        KernelSpec.rbf_mixture([-1.0])
    with pytest.raises(ValueError):
        KernelSpec.rbf_mixture([])
    with pytest.raises(ValueError):
        KernelSpec(KernelKind.LINEAR, (1.0,))
    for spec in SPECS:
        assert KernelSpec.from_dict(spec.to_dict()) == spec
    assert [s.code for s in (KernelSpec.linear(), KernelSpec.rbf_mixture(), KernelSpec.coral_map())] == [0, 1, 2]
