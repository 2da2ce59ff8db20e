# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Grünwald–Letnikov kernels.

Same contracts as ``_kernels_py``; the per-node dense solves use Gaussian
elimination with partial pivoting on small (q x q) blocks.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs
from scipy.linalg.cython_blas cimport ddot

from .errors import SolverError

cnp.import_array()


def gl_weights(double alpha, Py_ssize_t n):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n + 1)
    cdef double[::1] w = out
    cdef Py_ssize_t k
    w[0] = 1.0
    for k in range(1, n + 1):
        w[k] = w[k - 1] * (1.0 - (alpha + 1.0) / k)
    return out


def caputo_sums(const double[::1] w, F):
    cdef double[:, ::1] f = np.ascontiguousarray(F, dtype=np.float64)
    cdef Py_ssize_t n1 = f.shape[0], m = f.shape[1]
    out = np.zeros((n1, m))
    cdef double[:, ::1] g = out
    cdef double[::1] ww = np.array(w[:n1], dtype=np.float64)
    cdef double[::1] rev = np.empty(n1)
    cdef Py_ssize_t k, c
    cdef int len_, one = 1
    cdef double f0
    for c in range(m):
        # reversed shifted column: G[k] = w[:k+1] . rev[n1-1-k:], one BLAS dot per node
        f0 = f[0, c]
        for k in range(n1):
            rev[n1 - 1 - k] = f[k, c] - f0
        for k in range(n1):
            len_ = <int>(k + 1)
            g[k, c] = ddot(&len_, &ww[0], &one, &rev[n1 - 1 - k], &one)
    return out


cdef int _lu_solve(double[:, ::1] a, double[:, ::1] b) nogil:
    """Solve a x = b in place (b <- x); a is destroyed. Returns 0 on success."""
    cdef Py_ssize_t n = a.shape[0], m = b.shape[1]
    cdef Py_ssize_t i, j, r, piv, col
    cdef double best, tmp, factor
    for col in range(n):
        piv = col
        best = fabs(a[col, col])
        for r in range(col + 1, n):
            if fabs(a[r, col]) > best:
                best = fabs(a[r, col])
                piv = r
        if best == 0.0:
            return 1
        if piv != col:
            for j in range(n):
                tmp = a[col, j]; a[col, j] = a[piv, j]; a[piv, j] = tmp
            for j in range(m):
                tmp = b[col, j]; b[col, j] = b[piv, j]; b[piv, j] = tmp
        for r in range(col + 1, n):
            factor = a[r, col] / a[col, col]
            if factor != 0.0:
                for j in range(col, n):
                    a[r, j] -= factor * a[col, j]
                for j in range(m):
                    b[r, j] -= factor * b[col, j]
    for i in range(n - 1, -1, -1):
        for j in range(m):
            tmp = b[i, j]
            for r in range(i + 1, n):
                tmp -= a[i, r] * b[r, j]
            b[i, j] = tmp / a[i, i]
    return 0


def lower_solve(const double[::1] w, double c, M, R):
    cdef double[:, :, ::1] mm = np.ascontiguousarray(M, dtype=np.float64)
    cdef double[:, :, ::1] rr = np.ascontiguousarray(R, dtype=np.float64)
    cdef Py_ssize_t n1 = rr.shape[0], q = rr.shape[1], m = rr.shape[2]
    out = np.zeros((n1, q, m))
    cdef double[:, :, ::1] y = out
    cdef double[:, ::1] a = np.empty((q, q))
    cdef double[:, ::1] b = np.empty((q, m))
    cdef Py_ssize_t k, i, p, s
    cdef double coef
    cdef int bad = 0
    with nogil:
        for k in range(1, n1):
            for p in range(q):
                for s in range(m):
                    b[p, s] = rr[k, p, s]
                for s in range(q):
                    a[p, s] = mm[k, p, s]
            for i in range(1, k):
                coef = c * w[k - i]
                for p in range(q):
                    for s in range(m):
                        b[p, s] -= coef * y[i, p, s]
            if _lu_solve(a, b) != 0:
                bad = k
                break
            for p in range(q):
                for s in range(m):
                    y[k, p, s] = b[p, s]
    if bad:
        raise SolverError(f"singular step matrix at node {bad}")
    return out


def upper_solve(const double[::1] w, double c, Mt, R):
    cdef double[:, :, ::1] mm = np.ascontiguousarray(Mt, dtype=np.float64)
    cdef double[:, :, ::1] rr = np.ascontiguousarray(R, dtype=np.float64)
    cdef Py_ssize_t n1 = rr.shape[0], q = rr.shape[1], m = rr.shape[2]
    cdef Py_ssize_t n = n1 - 1
    out = np.zeros((n1, q, m))
    cdef double[:, :, ::1] v = out
    cdef double[:, ::1] a = np.empty((q, q))
    cdef double[:, ::1] b = np.empty((q, m))
    cdef Py_ssize_t k, i, p, s
    cdef double coef
    cdef int bad = 0
    with nogil:
        for k in range(n, 0, -1):
            for p in range(q):
                for s in range(m):
                    b[p, s] = rr[k, p, s]
                for s in range(q):
                    a[p, s] = mm[k, p, s]
            for i in range(k + 1, n1):
                coef = c * w[i - k]
                for p in range(q):
                    for s in range(m):
                        b[p, s] -= coef * v[i, p, s]
            if _lu_solve(a, b) != 0:
                bad = k
                break
            for p in range(q):
                for s in range(m):
                    v[k, p, s] = b[p, s]
    if bad:
        raise SolverError(f"singular step matrix at node {bad}")
    return out
