# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled margin-scan kernels.

The sphere scan of max_j |2 (f_j . xi)^2 - 1| over all sample directions is
the inner loop of every field-wide symbol check; these loops are the
compiled core, with numpy fallbacks in ``_kernels_py``.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def margin_scan(double[:, ::1] unit_fields, double[:, ::1] directions):
    cdef Py_ssize_t J = unit_fields.shape[0]
    cdef Py_ssize_t dim = unit_fields.shape[1]
    cdef Py_ssize_t M = directions.shape[0]
    cdef Py_ssize_t j, m, d, best
    cdef double dot, q, worst, margin
    margin = 1e300
    best = 0
    with nogil:
        for m in range(M):
            worst = 0.0
            for j in range(J):
                dot = 0.0
                for d in range(dim):
                    dot += unit_fields[j, d] * directions[m, d]
                q = 2.0 * dot * dot - 1.0
                if q < 0.0:
                    q = -q
                if q > worst:
                    worst = q
            if worst < margin:
                margin = worst
                best = m
    return margin, int(best)


def field_margin_scan(double[:, :, ::1] unit_fields, double[:, ::1] directions):
    cdef Py_ssize_t N = unit_fields.shape[0]
    cdef Py_ssize_t J = unit_fields.shape[1]
    cdef Py_ssize_t dim = unit_fields.shape[2]
    cdef Py_ssize_t M = directions.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] margins = np.empty(N, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx = np.empty(N, dtype=np.int64)
    cdef double[::1] mview = margins
    cdef long long[::1] iview = idx
    cdef Py_ssize_t n, j, m, d, best
    cdef double dot, q, worst, margin
    with nogil:
        for n in range(N):
            margin = 1e300
            best = 0
            for m in range(M):
                worst = 0.0
                for j in range(J):
                    dot = 0.0
                    for d in range(dim):
                        dot += unit_fields[n, j, d] * directions[m, d]
                    q = 2.0 * dot * dot - 1.0
                    if q < 0.0:
                        q = -q
                    if q > worst:
                        worst = q
                if worst < margin:
                    margin = worst
                    best = m
            mview[n] = margin
            iview[n] = best
    return margins, idx
