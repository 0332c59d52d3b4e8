"""Incremental per-batch caches for evaluating minibatch swaps.

Every drawn point occupies a *slot*; ``pos[h, m]`` holds the slot that sits
in batch ``m`` for stratum ``h``.  Source slots are numbered ``h * M + m``
(initial positions) and target slots follow after the ``k * M`` source slots.
A swap only changes the estimates of the two batches involved, so both
caches answer "objective after swapping positions m and m'" in O(1) (MMD)
or O(d^2) (CORAL) per candidate.
"""
from __future__ import annotations

import numpy as np

from .kernel import KernelSpec, kernel_diag, raw_gram

SOURCE, TARGET = 0, 1


class StaleCacheError(RuntimeError):
    pass


def accept_tolerance(D: np.ndarray, d0: float) -> float:
    # below this an improvement is indistinguishable from rounding noise
    scale = float(np.max(np.abs(D))) + abs(d0)
    return 1e-13 * scale * scale


class _State:
    version: int
    pos: list[np.ndarray]
    D: np.ndarray
    d0: float

    def objective(self) -> float:
        return float(np.sum((self.D - self.d0) ** 2))

    def _check(self, version):
        if version is not None and version != self.version:
            raise StaleCacheError(f"cache at version {self.version}, plan at {version}")

    def swap_delta(self, domain: int, h: int, m: int, m2: int, version=None) -> float:
        """Objective change from swapping positions ``m`` and ``m2`` of one tuple."""
        self._check(version)
        if m == m2:
            return 0.0
        if m > m2:
            m, m2 = m2, m
        return float(self.candidate_deltas(domain, h, m, np.array([m2]))[0])


class MMDState(_State):
    """Cache of ``Q[m, p] = <e_m, phi(x_p)>`` where ``e_m`` is the signed,
    weighted embedding difference of batch ``m``; ``D[m] = |e_m|^2``."""

    def __init__(self, spec: KernelSpec, X: np.ndarray, pos_s, pos_t, coef_s, coef_t, d0: float,
                 chunk: int = 512):
        self.spec = spec
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.pos = [np.array(pos_s, dtype=np.int64), np.array(pos_t, dtype=np.int64)]
        self.coef = [np.asarray(coef_s, dtype=np.float64), -np.asarray(coef_t, dtype=np.float64)]
        self.d0 = float(d0)
        self.version = 0
        k, M = self.pos[0].shape
        N = self.X.shape[0]
        self.diag = kernel_diag(spec, self.X)
        A = np.zeros((M, N))
        cols = np.arange(M)
        for pos, coef in zip(self.pos, self.coef):
            for h in range(pos.shape[0]):
                np.add.at(A, (cols, pos[h]), coef[h])
        self.Q = np.zeros((M, N))
        for lo in range(0, N, chunk):
            rows = np.arange(lo, min(N, lo + chunk))
            self.Q += A[:, rows] @ raw_gram(spec, self.X[rows], self.X)
        self.D = np.array([self._batch_value(m) for m in range(M)])

    def _batch_value(self, m: int) -> float:
        total = 0.0
        for pos, coef in zip(self.pos, self.coef):
            total += float(coef @ self.Q[m, pos[:, m]])
        return total

    def candidate_deltas(self, domain: int, h: int, m: int, others: np.ndarray) -> np.ndarray:
        pos = self.pos[domain]
        c = self.coef[domain][h]
        x = pos[h, m]
        ys = pos[h, others]
        kxy = raw_gram(self.spec, self.X[[x]], self.X[ys])[0]
        dd = self.diag[ys] + self.diag[x] - 2.0 * kxy
        d0 = self.d0
        Dm = self.D[m]
        Do = self.D[others]
        new_m = Dm + 2.0 * c * (self.Q[m, ys] - self.Q[m, x]) + c * c * dd
        new_o = Do + 2.0 * c * (self.Q[others, x] - self.Q[others, ys]) + c * c * dd
        delta = (new_m - d0) ** 2 + (new_o - d0) ** 2 - (Dm - d0) ** 2 - (Do - d0) ** 2
        delta[others == m] = 0.0
        return delta

    def apply_swap(self, domain: int, h: int, m: int, m2: int):
        if m != m2:
            pos = self.pos[domain]
            x, y = pos[h, m], pos[h, m2]
            c = self.coef[domain][h]
            rows = raw_gram(self.spec, self.X[[x, y]], self.X)
            dv = c * (rows[1] - rows[0])
            self.Q[m] += dv
            self.Q[m2] -= dv
            pos[h, m], pos[h, m2] = y, x
            self.D[m] = self._batch_value(m)
            self.D[m2] = self._batch_value(m2)
        self.version += 1


class ExplicitMMDState(_State):
    """MMD cache for kernels with a finite feature map: keeps the weighted
    embedding difference ``E[m]`` of every batch directly."""

    def __init__(self, F: np.ndarray, pos_s, pos_t, coef_s, coef_t, d0: float):
        self.F = np.ascontiguousarray(F, dtype=np.float64)
        self.pos = [np.array(pos_s, dtype=np.int64), np.array(pos_t, dtype=np.int64)]
        self.coef = [np.asarray(coef_s, dtype=np.float64), -np.asarray(coef_t, dtype=np.float64)]
        self.d0 = float(d0)
        self.version = 0
        M = self.pos[0].shape[1]
        self.E = np.zeros((M, self.F.shape[1]))
        for pos, coef in zip(self.pos, self.coef):
            for h in range(pos.shape[0]):
                self.E += coef[h] * self.F[pos[h]]
        self.D = np.einsum("mf,mf->m", self.E, self.E)

    def candidate_deltas(self, domain: int, h: int, m: int, others: np.ndarray) -> np.ndarray:
        pos = self.pos[domain]
        c = self.coef[domain][h]
        step = c * (self.F[pos[h, others]] - self.F[pos[h, m]])
        em = self.E[m] + step
        eo = self.E[others] - step
        new_m = np.einsum("jf,jf->j", em, em)
        new_o = np.einsum("jf,jf->j", eo, eo)
        d0 = self.d0
        Dm, Do = self.D[m], self.D[others]
        delta = (new_m - d0) ** 2 + (new_o - d0) ** 2 - (Dm - d0) ** 2 - (Do - d0) ** 2
        delta[others == m] = 0.0
        return delta

    def apply_swap(self, domain: int, h: int, m: int, m2: int):
        if m != m2:
            pos = self.pos[domain]
            x, y = pos[h, m], pos[h, m2]
            step = self.coef[domain][h] * (self.F[y] - self.F[x])
            self.E[m] += step
            self.E[m2] -= step
            pos[h, m], pos[h, m2] = y, x
            for b in (m, m2):
                self.D[b] = float(self.E[b] @ self.E[b])
        self.version += 1


class CoralState(_State):
    """Per-batch weighted first/second moment sums and covariance estimates."""

    def __init__(self, Xs, Xt, pos_s, pos_t, w_s, w_t, n_s: int, n_t: int, d0: float):
        self.Xs = np.ascontiguousarray(Xs, dtype=np.float64)
        self.Xt = np.ascontiguousarray(Xt, dtype=np.float64)
        self.pos = [np.array(pos_s, dtype=np.int64), np.array(pos_t, dtype=np.int64)]
        self.w = [np.asarray(w_s, dtype=np.float64), np.asarray(w_t, dtype=np.float64)]
        self.n = [int(n_s), int(n_t)]
        self.d0 = float(d0)
        self.version = 0
        # slot ids in pos_t start after the source slots
        self.offset = [0, self.Xs.shape[0]]
        self.Xd = [self.Xs, self.Xt]
        k, M = self.pos[0].shape
        self.W = [float(w.sum()) for w in self.w]
        self.s1 = []
        self.s2 = []
        self.C = []
        for dom in (SOURCE, TARGET):
            z = self._points(dom, self.pos[dom])  # k x M x d
            w = self.w[dom][:, None, None]
            s1 = np.sum(w * z, axis=0)
            s2 = np.einsum("hm,hmi,hmj->mij", np.broadcast_to(self.w[dom][:, None], (k, M)), z, z)
            self.s1.append(s1)
            self.s2.append(s2)
            self.C.append(self._cov(dom, s1, s2))
        self.D = np.sum((self.C[0] - self.C[1]) ** 2, axis=(1, 2))

    def _points(self, dom: int, slots):
        return self.Xd[dom][np.asarray(slots) - self.offset[dom]]

    def _cov(self, dom: int, s1: np.ndarray, s2: np.ndarray) -> np.ndarray:
        n = self.n[dom]
        mu = s1 / n
        outer = np.einsum("...i,...j->...ij", s1, mu)
        mm = np.einsum("...i,...j->...ij", mu, mu)
        return (s2 - outer - np.swapaxes(outer, -1, -2) + self.W[dom] * mm) / (n - 1)

    def _moved(self, dom, h, m, others):
        pos = self.pos[dom]
        w = self.w[dom][h]
        x = self._points(dom, pos[h, m])
        ys = self._points(dom, pos[h, others])
        dz = ys - x
        dzz = np.einsum("ji,jk->jik", ys, ys) - np.outer(x, x)
        return w * dz, w * dzz

    def candidate_deltas(self, domain: int, h: int, m: int, others: np.ndarray) -> np.ndarray:
        d1, d2 = self._moved(domain, h, m, others)
        s1, s2 = self.s1[domain], self.s2[domain]
        other = self.C[1 - domain]
        sign = 1.0 if domain == SOURCE else -1.0
        new_cm = self._cov(domain, s1[m] + d1, s2[m] + d2)
        new_co = self._cov(domain, s1[others] - d1, s2[others] - d2)
        new_m = np.sum((sign * (new_cm - other[m])) ** 2, axis=(1, 2))
        new_o = np.sum((sign * (new_co - other[others])) ** 2, axis=(1, 2))
        d0 = self.d0
        Dm, Do = self.D[m], self.D[others]
        delta = (new_m - d0) ** 2 + (new_o - d0) ** 2 - (Dm - d0) ** 2 - (Do - d0) ** 2
        delta[others == m] = 0.0
        return delta

    def apply_swap(self, domain: int, h: int, m: int, m2: int):
        if m != m2:
            d1, d2 = self._moved(domain, h, m, np.array([m2]))
            s1, s2, C = self.s1[domain], self.s2[domain], self.C[domain]
            s1[m] += d1[0]
            s2[m] += d2[0]
            s1[m2] -= d1[0]
            s2[m2] -= d2[0]
            for b in (m, m2):
                C[b] = self._cov(domain, s1[b], s2[b])
                self.D[b] = float(np.sum((self.C[0][b] - self.C[1][b]) ** 2))
            pos = self.pos[domain]
            pos[h, m], pos[h, m2] = pos[h, m2], pos[h, m]
        self.version += 1
