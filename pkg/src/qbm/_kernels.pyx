# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, fabs

cnp.import_array()


def spin_table(Py_ssize_t n):
    cdef Py_ssize_t dim = 1 << n
    cdef double[:, ::1] z = np.empty((dim, n))
    cdef Py_ssize_t s, a
    for s in range(dim):
        for a in range(n):
            z[s, a] = -1.0 if (s >> (n - 1 - a)) & 1 else 1.0
    return np.asarray(z)


def ising_diagonal(b, w, Py_ssize_t n):
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef const double[:, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t dim = 1 << n
    cdef double[::1] out = np.empty(dim)
    cdef double[64] z
    cdef double e
    cdef Py_ssize_t s, a, c
    if n > 64:
        raise ValueError("too many qubits")
    for s in range(dim):
        e = 0.0
        for a in range(n):
            z[a] = -1.0 if (s >> (n - 1 - a)) & 1 else 1.0
            e -= bv[a] * z[a]
        for a in range(n):
            for c in range(a + 1, n):
                e -= wv[a, c] * z[a] * z[c]
        out[s] = e
    return np.asarray(out)


def add_transverse(double[:, ::1] h, gamma, Py_ssize_t n):
    cdef const double[::1] g = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef Py_ssize_t dim = 1 << n
    cdef Py_ssize_t s, a, bit
    for a in range(n):
        if g[a] == 0.0:
            continue
        bit = 1 << (n - 1 - a)
        for s in range(dim):
            h[s, s ^ bit] -= g[a]
    return np.asarray(h)


def loewner_exp(lam, double rtol=1e-9):
    cdef const double[::1] l = np.ascontiguousarray(lam, dtype=np.float64)
    cdef Py_ssize_t m = l.shape[0]
    cdef double[:, ::1] out = np.empty((m, m))
    cdef Py_ssize_t i, j
    cdef double lo, gap, scale, v
    for i in range(m):
        scale = fabs(l[i])
        if scale < 1.0:
            scale = 1.0
        for j in range(m):
            if l[i] < l[j]:
                lo = l[i]
                gap = l[j] - l[i]
            else:
                lo = l[j]
                gap = l[i] - l[j]
            if gap < rtol * scale:
                v = -exp(-lo)
            else:
                v = exp(-lo) * expm1(-gap) / gap
            out[i, j] = v
    return np.asarray(out)


def flip_traces(a, b, Py_ssize_t n):
    cdef const double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t dim = av.shape[0]
    cdef Py_ssize_t cols = av.shape[1]
    cdef double[::1] out = np.zeros(n)
    cdef Py_ssize_t q, s, j, t
    cdef double acc
    for q in range(n):
        acc = 0.0
        for s in range(dim):
            t = s ^ (1 << (n - 1 - q))
            for j in range(cols):
                acc += av[s, j] * bv[t, j]
        out[q] = acc
    return np.asarray(out)
