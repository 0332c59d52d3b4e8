# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the sequential hot loops.

Each function mirrors its counterpart in ``_fallback`` / ``_reorder``
operation for operation, so both backends make the same decisions.
"""
import numpy as np

from libc.math cimport exp, fabs
from libc.stdint cimport int64_t


def assign_constrained(const double[:, ::1] P, Py_ssize_t n_min, const int64_t[::1] order):
    cdef Py_ssize_t n = P.shape[0], k = P.shape[1]
    cdef Py_ssize_t i, t, h, best, nh
    cdef Py_ssize_t deficit = n_min * k, remaining = n
    cdef long long evals = 0
    cdef double val, best_val
    cdef bint free
    labels_arr = np.empty(n, dtype=np.int64)
    sizes_arr = np.zeros(k, dtype=np.int64)
    cdef int64_t[::1] labels = labels_arr
    cdef int64_t[::1] sizes = sizes_arr
    with nogil:
        for t in range(n):
            i = order[t]
            free = remaining - 1 >= deficit
            best = -1
            best_val = 0.0
            for h in range(k):
                evals += 1
                nh = sizes[h]
                if free or nh < n_min:
                    val = P[i, h] * (nh + 1)
                    if best < 0 or val < best_val:
                        best = h
                        best_val = val
            labels[i] = best
            if sizes[best] < n_min:
                deficit -= 1
            sizes[best] += 1
            remaining -= 1
    return labels_arr, evals


cdef inline double _dot(const double[:, ::1] X, Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    cdef Py_ssize_t j
    cdef double s = 0.0
    for j in range(X.shape[1]):
        s += X[a, j] * X[b, j]
    return s


cdef inline double _kernel(const double[:, ::1] X, const double[::1] sqn, Py_ssize_t a,
                           Py_ssize_t b, int kind, const double[::1] gammas) noexcept nogil:
    cdef double ab = _dot(X, a, b)
    cdef double d2, acc
    cdef Py_ssize_t g
    if kind == 0:
        return ab
    if kind == 2:
        return ab * ab
    d2 = sqn[a] + sqn[b] - 2.0 * ab
    if d2 < 0.0:
        d2 = 0.0
    acc = 0.0
    for g in range(gammas.shape[0]):
        acc = acc + exp(-gammas[g] * d2)
    return acc


cdef inline double _scale_tol(const double[::1] D, double d0) noexcept nogil:
    cdef double mx = 0.0
    cdef Py_ssize_t m
    for m in range(D.shape[0]):
        if fabs(D[m]) > mx:
            mx = fabs(D[m])
    mx = mx + fabs(d0)
    return 1e-13 * mx * mx


cdef inline double _objective(const double[::1] D, double d0) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t m
    for m in range(D.shape[0]):
        s += (D[m] - d0) * (D[m] - d0)
    return s


cdef double _batch_value(const double[:, ::1] Q, const int64_t[:, ::1] pos_s,
                         const int64_t[:, ::1] pos_t, const double[::1] cs,
                         const double[::1] ct, Py_ssize_t m) noexcept nogil:
    cdef double total = 0.0, part
    cdef Py_ssize_t h
    part = 0.0
    for h in range(pos_s.shape[0]):
        part += cs[h] * Q[m, pos_s[h, m]]
    total += part
    part = 0.0
    for h in range(pos_t.shape[0]):
        part += ct[h] * Q[m, pos_t[h, m]]
    total += part
    return total


def greedy_mmd(const double[:, ::1] X, int kind, const double[::1] gammas,
               int64_t[:, ::1] pos_s, int64_t[:, ::1] pos_t,
               const double[::1] coef_s, const double[::1] coef_t,
               double[:, ::1] Q, double[::1] D, const double[::1] diag, double d0):
    """Greedy swap pass on an initialised MMD cache (``coef_t`` already negated)."""
    cdef Py_ssize_t k = pos_s.shape[0], M = pos_s.shape[1], N = X.shape[0]
    cdef Py_ssize_t m, mm, h, dom, x, y, best_m, p
    cdef long long comparisons = 0, n_trace = 1
    cdef double c, Dm, Do, kxy, dd, new_m, new_o, delta, best, tol, qmx, dv
    cdef int64_t[:, ::1] pos
    trace_arr = np.empty(2 * k * M + 1, dtype=np.float64)
    sqn_arr = np.empty(N, dtype=np.float64)
    cdef double[::1] trace = trace_arr
    cdef double[::1] sqn = sqn_arr
    for p in range(N):
        sqn[p] = _dot(X, p, p)
    trace[0] = _objective(D, d0)
    with nogil:
        for m in range(M - 1):
            for h in range(k):
                for dom in range(2):
                    if dom == 0:
                        pos = pos_s
                        c = coef_s[h]
                    else:
                        pos = pos_t
                        c = coef_t[h]
                    x = pos[h, m]
                    Dm = D[m]
                    qmx = Q[m, x]
                    best = 0.0
                    best_m = m
                    for mm in range(m + 1, M):
                        y = pos[h, mm]
                        kxy = _kernel(X, sqn, x, y, kind, gammas)
                        dd = diag[y] + diag[x] - 2.0 * kxy
                        Do = D[mm]
                        new_m = Dm + 2.0 * c * (Q[m, y] - qmx) + c * c * dd
                        new_o = Do + 2.0 * c * (Q[mm, x] - Q[mm, y]) + c * c * dd
                        delta = ((new_m - d0) * (new_m - d0) + (new_o - d0) * (new_o - d0)
                                 - (Dm - d0) * (Dm - d0) - (Do - d0) * (Do - d0))
                        comparisons += 1
                        if delta < best:
                            best = delta
                            best_m = mm
                    tol = _scale_tol(D, d0)
                    if best_m != m and best < -tol:
                        y = pos[h, best_m]
                        for p in range(N):
                            dv = c * (_kernel(X, sqn, y, p, kind, gammas)
                                      - _kernel(X, sqn, x, p, kind, gammas))
                            Q[m, p] += dv
                            Q[best_m, p] -= dv
                        pos[h, m] = y
                        pos[h, best_m] = x
                        D[m] = _batch_value(Q, pos_s, pos_t, coef_s, coef_t, m)
                        D[best_m] = _batch_value(Q, pos_s, pos_t, coef_s, coef_t, best_m)
                        trace[n_trace] = _objective(D, d0)
                        n_trace += 1
    return trace_arr[:n_trace].copy(), comparisons


cdef void _cov(const double[::1] s1, const double[::1] s2, double n, double W, Py_ssize_t d,
               double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double mui, muj
    for i in range(d):
        mui = s1[i] / n
        for j in range(d):
            muj = s1[j] / n
            out[i * d + j] = ((s2[i * d + j] - s1[i] * muj) - s1[j] * mui + W * (mui * muj)) / (n - 1.0)


cdef double _frob(const double[::1] a, const double[::1] b) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0, t
    for i in range(a.shape[0]):
        t = a[i] - b[i]
        s += t * t
    return s


cdef void _shift(const double[::1] s1, const double[::1] s2, const double[:, ::1] Z,
                 Py_ssize_t x, Py_ssize_t y, double w, double sgn, Py_ssize_t d,
                 double[::1] o1, double[::1] o2) noexcept nogil:
    # moments after replacing point x by point y (sgn=+1) or y by x (sgn=-1)
    cdef Py_ssize_t i, j
    for i in range(d):
        o1[i] = s1[i] + sgn * (w * (Z[y, i] - Z[x, i]))
        for j in range(d):
            o2[i * d + j] = s2[i * d + j] + sgn * (w * (Z[y, i] * Z[y, j] - Z[x, i] * Z[x, j]))


def greedy_coral(const double[:, ::1] Xs, const double[:, ::1] Xt,
                 int64_t[:, ::1] pos_s, int64_t[:, ::1] pos_t, Py_ssize_t offset_t,
                 const double[::1] w_s, const double[::1] w_t, double n_s, double n_t,
                 double[:, ::1] s1_s, double[:, ::1] s2_s, double[:, ::1] C_s,
                 double[:, ::1] s1_t, double[:, ::1] s2_t, double[:, ::1] C_t,
                 double[::1] D, double d0):
    """Greedy swap pass on an initialised CORAL cache (moments flattened to d*d)."""
    cdef Py_ssize_t k = pos_s.shape[0], M = pos_s.shape[1], d = Xs.shape[1]
    cdef Py_ssize_t m, mm, h, dom, x, y, best_m, off, i
    cdef long long comparisons = 0, n_trace = 1
    cdef double w, n, W, W_s = 0.0, W_t = 0.0, Dm, Do, new_m, new_o, delta, best, tol
    cdef int64_t[:, ::1] pos
    cdef const double[:, ::1] Z
    cdef double[:, ::1] s1
    cdef double[:, ::1] s2
    cdef double[:, ::1] C
    cdef double[:, ::1] Cother
    trace_arr = np.empty(2 * k * M + 1, dtype=np.float64)
    cdef double[::1] trace = trace_arr
    cdef double[::1] a1 = np.empty(d)
    cdef double[::1] a2 = np.empty(d * d)
    cdef double[::1] ca = np.empty(d * d)
    cdef double[::1] cb = np.empty(d * d)
    for h in range(k):
        W_s += w_s[h]
        W_t += w_t[h]
    trace[0] = _objective(D, d0)
    with nogil:
        for m in range(M - 1):
            for h in range(k):
                for dom in range(2):
                    if dom == 0:
                        pos, Z, off, w, n, W = pos_s, Xs, 0, w_s[h], n_s, W_s
                        s1, s2, C, Cother = s1_s, s2_s, C_s, C_t
                    else:
                        pos, Z, off, w, n, W = pos_t, Xt, offset_t, w_t[h], n_t, W_t
                        s1, s2, C, Cother = s1_t, s2_t, C_t, C_s
                    x = pos[h, m] - off
                    Dm = D[m]
                    best = 0.0
                    best_m = m
                    for mm in range(m + 1, M):
                        y = pos[h, mm] - off
                        Do = D[mm]
                        _shift(s1[m], s2[m], Z, x, y, w, 1.0, d, a1, a2)
                        _cov(a1, a2, n, W, d, ca)
                        new_m = _frob(ca, Cother[m])
                        _shift(s1[mm], s2[mm], Z, x, y, w, -1.0, d, a1, a2)
                        _cov(a1, a2, n, W, d, cb)
                        new_o = _frob(cb, Cother[mm])
                        delta = ((new_m - d0) * (new_m - d0) + (new_o - d0) * (new_o - d0)
                                 - (Dm - d0) * (Dm - d0) - (Do - d0) * (Do - d0))
                        comparisons += 1
                        if delta < best:
                            best = delta
                            best_m = mm
                    tol = _scale_tol(D, d0)
                    if best_m != m and best < -tol:
                        y = pos[h, best_m] - off
                        _shift(s1[m], s2[m], Z, x, y, w, 1.0, d, a1, a2)
                        s1[m, :] = a1
                        s2[m, :] = a2
                        _shift(s1[best_m], s2[best_m], Z, x, y, w, -1.0, d, a1, a2)
                        s1[best_m, :] = a1
                        s2[best_m, :] = a2
                        _cov(s1[m], s2[m], n, W, d, C[m])
                        _cov(s1[best_m], s2[best_m], n, W, d, C[best_m])
                        D[m] = _frob(C_s[m], C_t[m])
                        D[best_m] = _frob(C_s[best_m], C_t[best_m])
                        pos[h, m], pos[h, best_m] = pos[h, best_m], pos[h, m]
                        trace[n_trace] = _objective(D, d0)
                        n_trace += 1
    return trace_arr[:n_trace].copy(), comparisons


def greedy_mmd_explicit(const double[:, ::1] F, int64_t[:, ::1] pos_s, int64_t[:, ::1] pos_t,
                        const double[::1] coef_s, const double[::1] coef_t,
                        double[:, ::1] E, double[::1] D, double d0):
    """Greedy swap pass when the kernel has a finite feature map ``F``."""
    cdef Py_ssize_t k = pos_s.shape[0], M = pos_s.shape[1], nf = F.shape[1]
    cdef Py_ssize_t m, mm, h, dom, x, y, best_m, j
    cdef long long comparisons = 0, n_trace = 1
    cdef double c, Dm, Do, new_m, new_o, delta, best, tol, step, a, b
    cdef int64_t[:, ::1] pos
    trace_arr = np.empty(2 * k * M + 1, dtype=np.float64)
    cdef double[::1] trace = trace_arr
    trace[0] = _objective(D, d0)
    with nogil:
        for m in range(M - 1):
            for h in range(k):
                for dom in range(2):
                    if dom == 0:
                        pos = pos_s
                        c = coef_s[h]
                    else:
                        pos = pos_t
                        c = coef_t[h]
                    x = pos[h, m]
                    Dm = D[m]
                    best = 0.0
                    best_m = m
                    for mm in range(m + 1, M):
                        y = pos[h, mm]
                        new_m = 0.0
                        new_o = 0.0
                        for j in range(nf):
                            step = c * (F[y, j] - F[x, j])
                            a = E[m, j] + step
                            b = E[mm, j] - step
                            new_m += a * a
                            new_o += b * b
                        Do = D[mm]
                        delta = ((new_m - d0) * (new_m - d0) + (new_o - d0) * (new_o - d0)
                                 - (Dm - d0) * (Dm - d0) - (Do - d0) * (Do - d0))
                        comparisons += 1
                        if delta < best:
                            best = delta
                            best_m = mm
                    tol = _scale_tol(D, d0)
                    if best_m != m and best < -tol:
                        y = pos[h, best_m]
                        new_m = 0.0
                        new_o = 0.0
                        for j in range(nf):
                            step = c * (F[y, j] - F[x, j])
                            E[m, j] += step
                            E[best_m, j] -= step
                            new_m += E[m, j] * E[m, j]
                            new_o += E[best_m, j] * E[best_m, j]
                        pos[h, m] = y
                        pos[h, best_m] = x
                        D[m] = new_m
                        D[best_m] = new_o
                        trace[n_trace] = _objective(D, d0)
                        n_trace += 1
    return trace_arr[:n_trace].copy(), comparisons
