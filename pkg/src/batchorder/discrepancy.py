"""Reference and weighted-minibatch MMD / CORAL discrepancies."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .kernel import KernelKind, KernelSpec, prepare_features, raw_gram

NEG_TOL = 1e-10


class Domain(enum.Enum):
    SOURCE = "source"
    TARGET = "target"


class LossKind(enum.Enum):
    MMD = "mmd"
    CORAL = "coral"


@dataclass(frozen=True)
class FeatureSet:
    """Feature vectors of one domain, one row per example."""

    data: np.ndarray
    domain: Domain = Domain.SOURCE

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"feature matrix must be n x d with n, d >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature matrix contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "domain", Domain(self.domain))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


def as_feature_set(x, domain=Domain.SOURCE) -> FeatureSet:
    if isinstance(x, FeatureSet):
        return x
    return FeatureSet(np.asarray(x, dtype=np.float64), domain)


@dataclass(frozen=True)
class WeightedBatch:
    """One minibatch: an index per stratum and the size of that stratum."""

    indices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).ravel()
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if idx.shape != w.shape:
            raise ValueError("indices and weights must have equal length")
        if np.any(w <= 0):
            raise ValueError("batch weights must be positive")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.indices.size

    def to_dict(self) -> dict:
        w = self.weights
        weights = [int(v) for v in w] if np.all(w == np.round(w)) else w.tolist()
        return {"indices": self.indices.tolist(), "weights": weights}


@dataclass
class DiscrepancyReport:
    reference: float
    estimates: np.ndarray
    squared_errors: np.ndarray = field(init=False)
    mean_squared_error: float = field(init=False)

    def __post_init__(self):
        self.estimates = np.asarray(self.estimates, dtype=np.float64)
        self.squared_errors = (self.estimates - self.reference) ** 2
        self.mean_squared_error = float(self.squared_errors.mean()) if self.estimates.size else 0.0

    def to_dict(self) -> dict:
        return {
            "reference": self.reference,
            "estimates": self.estimates.tolist(),
            "squared_errors": self.squared_errors.tolist(),
            "mean_squared_error": self.mean_squared_error,
        }


def _check_pair(S: FeatureSet, T: FeatureSet):
    if S.d != T.d:
        raise ValueError(f"source and target dimensions differ: {S.d} vs {T.d}")


def _check_batch(batch: WeightedBatch, n: int, name: str):
    if batch.indices.size == 0:
        raise ValueError(f"{name} batch is empty")
    if batch.indices.min() < 0 or batch.indices.max() >= n:
        raise IndexError(f"{name} batch index out of range for n={n}")


def _clamp(value: float, scale: float) -> float:
    if value < -NEG_TOL * max(1.0, scale):
        raise ArithmeticError(f"squared norm evaluated to {value:.3e}")
    return max(value, 0.0)


def explicit_features(spec: KernelSpec, X: np.ndarray) -> np.ndarray | None:
    """Finite feature map for kernels that have one, else None."""
    if spec.kind is KernelKind.LINEAR:
        return X
    if spec.kind is KernelKind.CORAL_MAP:
        return np.einsum("ni,nj->nij", X, X).reshape(X.shape[0], -1)
    return None


def _block_mean(spec: KernelSpec, A: np.ndarray, B: np.ndarray, chunk: int = 1024) -> float:
    total = 0.0
    for lo in range(0, A.shape[0], chunk):
        total += float(raw_gram(spec, A[lo : lo + chunk], B).sum())
    return total / (A.shape[0] * B.shape[0])


def reference_mmd(spec: KernelSpec, S, T) -> float:
    """Squared distance between full-data mean embeddings."""
    S, T = as_feature_set(S), as_feature_set(T, Domain.TARGET)
    _check_pair(S, T)
    zs, zt = prepare_features(spec, S.data), prepare_features(spec, T.data)
    fs, ft = explicit_features(spec, zs), explicit_features(spec, zt)
    if fs is not None:
        diff = fs.mean(axis=0) - ft.mean(axis=0)
        return float(diff @ diff)
    kss = _block_mean(spec, zs, zs)
    ktt = _block_mean(spec, zt, zt)
    kst = _block_mean(spec, zs, zt)
    return _clamp(kss + ktt - 2.0 * kst, kss + ktt)


def stochastic_mmd(spec: KernelSpec, S, T, bs: WeightedBatch, bt: WeightedBatch) -> float:
    """Size-weighted minibatch MMD estimate.

    Each selected point is weighted by the size of its stratum and the sums
    are normalised by the full domain sizes, so singleton strata with full
    batches reproduce :func:`reference_mmd`.
    """
    S, T = as_feature_set(S), as_feature_set(T, Domain.TARGET)
    _check_pair(S, T)
    _check_batch(bs, S.n, "source")
    _check_batch(bt, T.n, "target")
    zs = prepare_features(spec, S.data)[bs.indices]
    zt = prepare_features(spec, T.data)[bt.indices]
    a = bs.weights / S.n
    b = bt.weights / T.n
    kss = float(a @ raw_gram(spec, zs, zs) @ a)
    ktt = float(b @ raw_gram(spec, zt, zt) @ b)
    kst = float(a @ raw_gram(spec, zs, zt) @ b)
    return _clamp(kss + ktt - 2.0 * kst, kss + ktt)


def reference_coral(S, T) -> float:
    """Squared Frobenius distance between sample covariances (1/(n-1))."""
    S, T = as_feature_set(S), as_feature_set(T, Domain.TARGET)
    _check_pair(S, T)
    if S.n < 2 or T.n < 2:
        raise ValueError("CORAL needs at least two examples per domain")
    cs = np.cov(S.data, rowvar=False, ddof=1).reshape(S.d, S.d)
    ct = np.cov(T.data, rowvar=False, ddof=1).reshape(T.d, T.d)
    return float(np.sum((cs - ct) ** 2))


def weighted_covariance(z: np.ndarray, w: np.ndarray, n: int) -> np.ndarray:
    mu = (w @ z) / n
    c = z - mu
    return (c.T * w) @ c / (n - 1)


def stochastic_coral(S, T, bs: WeightedBatch, bt: WeightedBatch) -> float:
    S, T = as_feature_set(S), as_feature_set(T, Domain.TARGET)
    _check_pair(S, T)
    _check_batch(bs, S.n, "source")
    _check_batch(bt, T.n, "target")
    if S.n < 2 or T.n < 2:
        raise ValueError("CORAL needs at least two examples per domain")
    cs = weighted_covariance(S.data[bs.indices], bs.weights, S.n)
    ct = weighted_covariance(T.data[bt.indices], bt.weights, T.n)
    return float(np.sum((cs - ct) ** 2))


def reference_discrepancy(loss: LossKind, spec: KernelSpec, S, T) -> float:
    if LossKind(loss) is LossKind.MMD:
        return reference_mmd(spec, S, T)
    return reference_coral(S, T)


def stochastic_discrepancy(loss: LossKind, spec: KernelSpec, S, T, bs, bt) -> float:
    if LossKind(loss) is LossKind.MMD:
        return stochastic_mmd(spec, S, T, bs, bt)
    return stochastic_coral(S, T, bs, bt)


def discrepancy_report(loss, spec, S, T, source_batches, target_batches) -> DiscrepancyReport:
    if len(source_batches) != len(target_batches):
        raise ValueError("source and target batch counts differ")
    ref = reference_discrepancy(loss, spec, S, T)
    est = [
        stochastic_discrepancy(loss, spec, S, T, bs, bt)
        for bs, bt in zip(source_batches, target_batches)
    ]
    return DiscrepancyReport(ref, np.array(est))


def batch_estimates(loss, spec: KernelSpec, S, T, idx_s, idx_t, w_s, w_t) -> np.ndarray:
    """Weighted estimates for many batches at once.

    ``idx_s`` is ``B x k_s`` (one row per batch); ``w_s`` broadcasts against
    it.  Row ``b`` equals ``stochastic_discrepancy`` on that batch.
    """
    S, T = as_feature_set(S), as_feature_set(T, Domain.TARGET)
    _check_pair(S, T)
    idx_s, idx_t = np.atleast_2d(idx_s), np.atleast_2d(idx_t)
    a = np.broadcast_to(np.asarray(w_s, dtype=np.float64), idx_s.shape) / S.n
    b = np.broadcast_to(np.asarray(w_t, dtype=np.float64), idx_t.shape) / T.n
    if LossKind(loss) is LossKind.CORAL:
        zs, zt = S.data[idx_s], T.data[idx_t]
        cs = _batched_cov(zs, a * S.n, S.n)
        ct = _batched_cov(zt, b * T.n, T.n)
        return np.sum((cs - ct) ** 2, axis=(1, 2))
    zs = prepare_features(spec, S.data)[idx_s]
    zt = prepare_features(spec, T.data)[idx_t]
    fs, ft = explicit_features(spec, zs.reshape(-1, S.d)), explicit_features(spec, zt.reshape(-1, T.d))
    if fs is not None:
        es = np.einsum("bh,bhf->bf", a, fs.reshape(*idx_s.shape, -1))
        et = np.einsum("bh,bhf->bf", b, ft.reshape(*idx_t.shape, -1))
        diff = es - et
        return np.einsum("bf,bf->b", diff, diff)
    out = np.empty(idx_s.shape[0])
    for r in range(idx_s.shape[0]):
        kss = a[r] @ raw_gram(spec, zs[r], zs[r]) @ a[r]
        ktt = b[r] @ raw_gram(spec, zt[r], zt[r]) @ b[r]
        kst = a[r] @ raw_gram(spec, zs[r], zt[r]) @ b[r]
        out[r] = max(kss + ktt - 2.0 * kst, 0.0)
    return out


def _batched_cov(z: np.ndarray, w: np.ndarray, n: int) -> np.ndarray:
    mu = np.einsum("bh,bhi->bi", w, z) / n
    c = z - mu[:, None, :]
    return np.einsum("bh,bhi,bhj->bij", w, c, c) / (n - 1)
