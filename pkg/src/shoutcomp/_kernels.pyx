# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops; must stay numerically equivalent to _kernels_py."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, M_PI

cnp.import_array()


def log_joint(const double[:, ::1] X, const double[:, ::1] means,
              const double[:, ::1] variances, const double[::1] log_weights):
    """log P(s) + log N(x | mu_s, diag(var_s)) for every row x and component s."""
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], k = means.shape[0]
    cdef Py_ssize_t i, j, c
    cdef double acc, diff
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] o = out
    inv = np.empty((k, d), dtype=np.float64)
    cdef double[:, ::1] iv = inv
    const = np.empty(k, dtype=np.float64)
    cdef double[::1] cst = const
    for c in range(k):
        acc = 0.0
        for j in range(d):
            iv[c, j] = 1.0 / variances[c, j]
            acc += log(2.0 * M_PI * variances[c, j])
        cst[c] = log_weights[c] - 0.5 * acc
    with nogil:
        for i in range(n):
            for c in range(k):
                acc = 0.0
                for j in range(d):
                    diff = X[i, j] - means[c, j]
                    acc += diff * diff * iv[c, j]
                o[i, c] = cst[c] - 0.5 * acc
    return out


def pair_dot(const double[:, ::1] U, const cnp.intp_t[::1] a, const cnp.intp_t[::1] b):
    """Row-wise dot products U[a[t]] . U[b[t]]."""
    cdef Py_ssize_t m = a.shape[0], d = U.shape[1], t, j
    cdef cnp.intp_t ia, ib
    cdef double acc
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for t in range(m):
            ia = a[t]
            ib = b[t]
            acc = 0.0
            for j in range(d):
                acc += U[ia, j] * U[ib, j]
            o[t] = acc
    return out
