# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: lift construction, l0 thresholding, residual
accumulation, and the impulse-ensemble adjoint gather.

Same contracts as caol._kernels._numpy; single-pass fused loops instead of
vectorized temporaries.  Inputs are const memoryviews because signals carry
read-only buffers.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def lift_line(const double[::1] x, const long long[::1] offsets):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t r = offsets.shape[0]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((n, r), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, base
    for j in range(r):
        base = offsets[j]
        for i in range(n):
            o[i, j] = x[(i + base) % n]
    return out


def lift_grid(const double[:, :] x, const long long[:, :] offsets):
    cdef Py_ssize_t h = x.shape[0]
    cdef Py_ssize_t w = x.shape[1]
    cdef Py_ssize_t r = offsets.shape[0]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((h * w, r), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, k, dy, dx
    for k in range(r):
        dy = offsets[k, 0]
        dx = offsets[k, 1]
        for i in range(h):
            for j in range(w):
                o[i * w + j, k] = x[(i + dy) % h, (j + dx) % w]
    return out


def hard_threshold(v, double alpha):
    arr = np.ascontiguousarray(v, dtype=np.float64)
    cdef const double[::1] vv = arr.ravel()
    cdef Py_ssize_t i, n = vv.shape[0]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] oo = out
    cdef Py_ssize_t nnz = 0
    cdef double val
    for i in range(n):
        val = vv[i]
        if val * val > alpha:
            oo[i] = val
            nnz += 1
        else:
            oo[i] = 0.0
    return out.reshape(arr.shape), nnz


def residual_sqnorm(a, b):
    cdef const double[::1] aa = np.ascontiguousarray(a, dtype=np.float64).ravel()
    cdef const double[::1] bb = np.ascontiguousarray(b, dtype=np.float64).ravel()
    if aa.shape[0] != bb.shape[0]:
        raise ValueError("shape mismatch")
    cdef double acc = 0.0, d
    cdef Py_ssize_t i
    for i in range(aa.shape[0]):
        d = aa[i] - bb[i]
        acc += d * d
    return acc


def impulse_adjoint_accumulate(const double[:, :, ::1] e, const long long[::1] pos,
                               Py_ssize_t r):
    cdef Py_ssize_t L = e.shape[0]
    cdef Py_ssize_t n = e.shape[1]
    cdef Py_ssize_t k = e.shape[2]
    cdef cnp.ndarray[double, ndim=2] out = np.zeros((r, k), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t l, rr, kk, row
    for l in range(L):
        for rr in range(r):
            row = (pos[l] - rr) % n
            if row < 0:
                row += n
            for kk in range(k):
                o[rr, kk] += e[l, row, kk]
    return out
