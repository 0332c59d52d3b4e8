"""Kernels, Gram matrices and the covariance feature map."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

DEFAULT_GAMMAS = (0.001, 0.01, 0.1, 1.0, 10.0)


class KernelKind(enum.Enum):
    LINEAR = "linear"
    RBF_MIXTURE = "rbf_mixture"
    CORAL_MAP = "coral_map"


# integer codes shared with the compiled core
KIND_CODES = {KernelKind.LINEAR: 0, KernelKind.RBF_MIXTURE: 1, KernelKind.CORAL_MAP: 2}


@dataclass(frozen=True)
class KernelSpec:
    """Declarative kernel choice.

    ``RBF_MIXTURE`` sums ``exp(-gamma * |z - z'|^2)`` over ``gammas``.
    ``CORAL_MAP`` is the inner product of centred outer products,
    ``<z - zbar, z' - zbar'>^2``; centring happens before evaluation.
    """

    kind: KernelKind
    gammas: tuple[float, ...] = field(default=())

    def __post_init__(self):
        kind = KernelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        gammas = tuple(float(g) for g in self.gammas)
        if kind is KernelKind.RBF_MIXTURE:
            if not gammas:
                raise ValueError("RBF mixture needs at least one gamma")
            if any(not np.isfinite(g) or g <= 0 for g in gammas):
                raise ValueError(f"gammas must be positive, got {gammas}")
        elif gammas:
            raise ValueError(f"{kind.value} kernel takes no gammas")
        object.__setattr__(self, "gammas", gammas)

    @classmethod
    def linear(cls) -> KernelSpec:
        return cls(KernelKind.LINEAR)

    @classmethod
    def rbf_mixture(cls, gammas=DEFAULT_GAMMAS) -> KernelSpec:
        return cls(KernelKind.RBF_MIXTURE, tuple(gammas))

    @classmethod
    def coral_map(cls) -> KernelSpec:
        return cls(KernelKind.CORAL_MAP)

    @property
    def code(self) -> int:
        return KIND_CODES[self.kind]

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "gammas": list(self.gammas)}

    @classmethod
    def from_dict(cls, d: dict) -> KernelSpec:
        return cls(KernelKind(d["kind"]), tuple(d.get("gammas", ())))


def _vec(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValueError(f"expected a non-empty feature vector, got shape {z.shape}")
    return z


def _check_dims(a: np.ndarray, b: np.ndarray):
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def eval_kernel(spec: KernelSpec, z, z2) -> float:
    """Evaluate the kernel on a single pair of (already centred) vectors."""
    z, z2 = _vec(z), _vec(z2)
    _check_dims(z, z2)
    if spec.kind is KernelKind.LINEAR:
        return float(z @ z2)
    if spec.kind is KernelKind.CORAL_MAP:
        return float(z @ z2) ** 2
    sq = float(np.sum((z - z2) ** 2))
    return float(sum(np.exp(-g * sq) for g in spec.gammas))


def coral_map(z, mean) -> np.ndarray:
    z, mean = _vec(z), _vec(mean)
    _check_dims(z, mean)
    c = z - mean
    return np.outer(c, c)


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] == 0:
        raise ValueError(f"expected an n x d feature matrix, got shape {x.shape}")
    return x


def sq_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    aa = np.einsum("ij,ij->i", A, A)
    bb = np.einsum("ij,ij->i", B, B)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def raw_gram(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    if spec.kind is KernelKind.LINEAR:
        return A @ B.T
    if spec.kind is KernelKind.CORAL_MAP:
        return (A @ B.T) ** 2
    d2 = sq_distances(A, B)
    out = np.zeros_like(d2)
    for g in spec.gammas:
        out += np.exp(-g * d2)
    return out


def gram(spec: KernelSpec, A, B=None, mean_a=None, mean_b=None) -> np.ndarray:
    """Dense Gram matrix ``K[i, j] = <phi(a_i), phi(b_j)>``.

    For ``CORAL_MAP`` rows of ``A`` are centred by ``mean_a`` (default: the
    mean of ``A``) and likewise for ``B``.
    """
    A = _as_matrix(A)
    B = A if B is None else _as_matrix(B)
    _check_dims(A, B)
    same = B is A or (A.shape == B.shape and np.array_equal(A, B))
    if spec.kind is KernelKind.CORAL_MAP:
        ma = A.mean(axis=0) if mean_a is None else _vec(mean_a)
        if same and mean_b is None:
            mb = ma
        else:
            mb = B.mean(axis=0) if mean_b is None else _vec(mean_b)
        _check_dims(A, ma[None, :])
        _check_dims(B, mb[None, :])
        A, B = A - ma, B - mb
    K = raw_gram(spec, A, B)
    if same and (spec.kind is not KernelKind.CORAL_MAP or np.array_equal(ma, mb)):
        K = 0.5 * (K + K.T)
    return K


def prepare_features(spec: KernelSpec, X) -> np.ndarray:
    """Features ready for raw kernel evaluation (centred for ``CORAL_MAP``)."""
    X = _as_matrix(X)
    if spec.kind is KernelKind.CORAL_MAP:
        X = X - X.mean(axis=0)
    return np.ascontiguousarray(X)


def kernel_rows(spec: KernelSpec, X: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """``K(X[rows], X)`` on prepared features, shape ``(len(rows), n)``."""
    return raw_gram(spec, X[rows], X)


def kernel_diag(spec: KernelSpec, X: np.ndarray) -> np.ndarray:
    if spec.kind is KernelKind.RBF_MIXTURE:
        return np.full(X.shape[0], float(len(spec.gammas)))
    sq = np.einsum("ij,ij->i", X, X)
    return sq if spec.kind is KernelKind.LINEAR else sq**2
