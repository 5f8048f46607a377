# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled univariate basis kernels; mirrors _pykernels exactly."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def bspline_local(double[::1] tknots, int m, int nu, double[::1] pts):
    cdef Py_ssize_t npts = pts.shape[0]
    cdef int p = m - 1
    cdef Py_ssize_t nbasis = tknots.shape[0] - m
    cdef cnp.ndarray[double, ndim=2] vals_arr = np.zeros((npts, m))
    cdef cnp.ndarray[cnp.int64_t, ndim=1] first_arr = np.empty(npts, dtype=np.int64)
    cdef double[:, ::1] vals = vals_arr
    cdef cnp.int64_t[::1] first = first_arr

    cdef Py_ssize_t i
    cdef int j, r, k, span, p0
    cdef double x, saved, temp, den, acc
    # scratch: max order is small, allocate per call
    cdef cnp.ndarray[double, ndim=1] N_arr = np.zeros(m)
    cdef cnp.ndarray[double, ndim=1] D_arr = np.zeros(m)
    cdef double[::1] N = N_arr
    cdef double[::1] D = D_arr

    for i in range(npts):
        x = pts[i]
        # span: last index with tknots[span] <= x, clipped to valid cells
        span = _find_span(tknots, x, p, nbasis)
        first[i] = span - p
        if nu >= m:
            continue
        p0 = p - nu
        for j in range(p0 + 1):
            N[j] = 0.0
        N[0] = 1.0
        for j in range(1, p0 + 1):
            saved = 0.0
            for r in range(j):
                den = (tknots[span + r + 1] - x) + (x - tknots[span + 1 - j + r])
                if den > 0.0:
                    temp = N[r] / den
                else:
                    temp = 0.0
                N[r] = saved + (tknots[span + r + 1] - x) * temp
                saved = (x - tknots[span + 1 - j + r]) * temp
            N[j] = saved
        for k in range(p0 + 1, p + 1):
            for r in range(k, -1, -1):
                acc = 0.0
                if r >= 1:
                    den = tknots[span + r] - tknots[span - k + r]
                    if den > 0.0:
                        acc += N[r - 1] / den
                if r <= k - 1:
                    den = tknots[span + r + 1] - tknots[span - k + r + 1]
                    if den > 0.0:
                        acc -= N[r] / den
                D[r] = k * acc
            for r in range(k + 1):
                N[r] = D[r]
        for r in range(p + 1):
            vals[i, r] = N[r]
    return vals_arr, first_arr


cdef inline int _find_span(double[::1] tknots, double x, int p, Py_ssize_t nbasis):
    cdef Py_ssize_t lo = 0
    cdef Py_ssize_t hi = tknots.shape[0]
    cdef Py_ssize_t mid
    # first index with tknots[idx] > x, i.e. searchsorted side='right'
    while lo < hi:
        mid = (lo + hi) // 2
        if tknots[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    cdef Py_ssize_t span = lo - 1
    if span < p:
        span = p
    if span > nbasis - 1:
        span = nbasis - 1
    return <int> span


def piecewise_local(double[::1] edges, int m, int nu, double[::1] pts):
    cdef Py_ssize_t npts = pts.shape[0]
    cdef Py_ssize_t ncell = edges.shape[0] - 1
    cdef cnp.ndarray[double, ndim=2] vals_arr = np.zeros((npts, m))
    cdef cnp.ndarray[cnp.int64_t, ndim=1] first_arr = np.empty(npts, dtype=np.int64)
    cdef double[:, ::1] vals = vals_arr
    cdef cnp.int64_t[::1] first = first_arr

    cdef Py_ssize_t i, lo, hi, mid, cell
    cdef int k, j
    cdef double x, t, coef, power

    for i in range(npts):
        x = pts[i]
        lo = 0
        hi = edges.shape[0]
        while lo < hi:
            mid = (lo + hi) // 2
            if edges[mid] <= x:
                lo = mid + 1
            else:
                hi = mid
        cell = lo - 1
        if cell < 0:
            cell = 0
        if cell > ncell - 1:
            cell = ncell - 1
        first[i] = cell * m
        t = x - edges[cell]
        for k in range(nu, m):
            coef = 1.0
            for j in range(k, k - nu, -1):
                coef *= j
            power = 1.0
            for j in range(k - nu):
                power *= t
            vals[i, k] = coef * power
    return vals_arr, first_arr
