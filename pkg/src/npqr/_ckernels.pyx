# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: local B-spline derivative tables and score accumulation."""

import numpy as np


cdef Py_ssize_t _find_span(const double[::1] t, Py_ssize_t nb, int p, double x) noexcept nogil:
    cdef Py_ssize_t lo, hi, mid
    if x >= t[nb]:
        return nb - 1
    lo = p
    hi = nb
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if x < t[mid]:
            hi = mid
        else:
            lo = mid
    return lo


cdef void _ders_basis(const double[::1] t, Py_ssize_t span, double x, int p, int nd,
                      double[:, ::1] ndu, double[:, ::1] a, double[::1] left,
                      double[::1] right, double[:, ::1] ders) noexcept nogil:
    cdef int j, r, k, s1, s2, rk, pk, j1, j2, jj
    cdef double saved, temp, d, fac
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = x - t[span + 1 - j]
        right[j] = t[span + j] - x
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved
    for j in range(p + 1):
        ders[0, j] = ndu[j, p]
    for r in range(p + 1):
        s1 = 0
        s2 = 1
        a[0, 0] = 1.0
        for k in range(1, nd + 1):
            d = 0.0
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for jj in range(j1, j2 + 1):
                a[s2, jj] = (a[s1, jj] - a[s1, jj - 1]) / ndu[pk + 1, rk + jj]
                d += a[s2, jj] * ndu[rk + jj, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            j = s1
            s1 = s2
            s2 = j
    fac = p
    for k in range(1, nd + 1):
        for j in range(p + 1):
            ders[k, j] *= fac
        fac *= (p - k)


def bspline_design(knots, int degree, x, int deriv):
    cdef const double[::1] t = np.ascontiguousarray(knots, dtype=np.float64)
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef int p = degree
    cdef Py_ssize_t nb = t.shape[0] - p - 1
    cdef Py_ssize_t npts = xv.shape[0]
    out_arr = np.zeros((npts, nb), dtype=np.float64)
    if deriv > p:
        return out_arr
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] ndu = np.zeros((p + 1, p + 1))
    cdef double[:, ::1] a = np.zeros((2, p + 1))
    cdef double[::1] left = np.zeros(p + 1)
    cdef double[::1] right = np.zeros(p + 1)
    cdef double[:, ::1] ders = np.zeros((deriv + 1, p + 1))
    cdef Py_ssize_t i, span, j
    with nogil:
        for i in range(npts):
            span = _find_span(t, nb, p, xv[i])
            _ders_basis(t, span, xv[i], p, deriv, ndu, a, left, right, ders)
            for j in range(p + 1):
                out[i, span - p + j] = ders[deriv, j]
    return out_arr


cdef void _score_one(const double[:, ::1] Z, const double[::1] U, const double[::1] taus,
                     const double[::1] total, double[:, ::1] acc, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t n = Z.shape[0], m = Z.shape[1], T = taus.shape[0]
    cdef Py_ssize_t i, j, k, lo, hi, mid
    cdef double u
    for k in range(T + 1):
        for j in range(m):
            acc[k, j] = 0.0
    for i in range(n):
        u = U[i]
        # first index with taus[k] >= u
        lo = 0
        hi = T
        while lo < hi:
            mid = (lo + hi) // 2
            if taus[mid] < u:
                lo = mid + 1
            else:
                hi = mid
        for j in range(m):
            acc[lo, j] += Z[i, j]
    for k in range(1, T):
        for j in range(m):
            acc[k, j] += acc[k - 1, j]
    for j in range(m):
        for k in range(T):
            out[j, k] = taus[k] * total[j] - acc[k, j]


def score_process(Z, U, taus):
    cdef const double[:, ::1] Zv = np.ascontiguousarray(Z, dtype=np.float64)
    cdef const double[::1] tv = np.ascontiguousarray(taus, dtype=np.float64)
    U = np.ascontiguousarray(U, dtype=np.float64)
    cdef Py_ssize_t m = Zv.shape[1], T = tv.shape[0]
    # column sums in observation order, matching the accumulation order
    total_arr = np.zeros(m)
    cdef double[::1] total = total_arr
    cdef Py_ssize_t i, j, b, nrow
    with nogil:
        for i in range(Zv.shape[0]):
            for j in range(m):
                total[j] += Zv[i, j]
    cdef double[:, ::1] acc = np.zeros((T + 1, m))
    cdef const double[:, ::1] U2
    cdef double[:, :, ::1] out3
    if U.ndim == 1:
        out_arr = np.empty((m, T))
        _score_one(Zv, U, tv, total, acc, out_arr)
        return out_arr
    U2 = U
    nrow = U2.shape[0]
    out_arr = np.empty((nrow, m, T))
    out3 = out_arr
    with nogil:
        for b in range(nrow):
            _score_one(Zv, U2[b], tv, total, acc, out3[b])
    return out_arr
