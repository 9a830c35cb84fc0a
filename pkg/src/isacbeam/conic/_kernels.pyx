# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled solver kernels. Same contracts as _kernels_py. For small
blocks the congruence transform is fused with the svec gather so no
(m, n, n) temporary is materialized; for larger blocks the dense
multiplies go through BLAS (via numpy) and only the gather is fused,
since handwritten loops cannot compete with gemm past a few rows."""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def svec_batch(cnp.ndarray mats_in):
    cdef double[:, :, ::1] mats = np.ascontiguousarray(mats_in, dtype=np.float64)
    cdef Py_ssize_t m = mats.shape[0], n = mats.shape[1]
    cdef Py_ssize_t p = n * (n + 1) // 2
    out_np = np.empty((m, p), dtype=np.float64)
    cdef double[:, ::1] out = out_np
    cdef double rt2 = sqrt(2.0)
    cdef Py_ssize_t i, a, b, t
    for i in range(m):
        t = 0
        for a in range(n):
            for b in range(a):
                out[i, t] = mats[i, a, b] * rt2
                t += 1
            out[i, t] = mats[i, a, a]
            t += 1
    return out_np


def smat_batch(cnp.ndarray vecs_in, Py_ssize_t n):
    cdef double[:, ::1] vecs = np.ascontiguousarray(vecs_in, dtype=np.float64)
    cdef Py_ssize_t m = vecs.shape[0]
    out_np = np.empty((m, n, n), dtype=np.float64)
    cdef double[:, :, ::1] out = out_np
    cdef double inv_rt2 = 1.0 / sqrt(2.0)
    cdef Py_ssize_t i, a, b, t
    cdef double v
    for i in range(m):
        t = 0
        for a in range(n):
            for b in range(a):
                v = vecs[i, t] * inv_rt2
                out[i, a, b] = v
                out[i, b, a] = v
                t += 1
            out[i, a, a] = vecs[i, t]
            t += 1
    return out_np


def congruence_svec(cnp.ndarray R_in, cnp.ndarray mats_in):
    R_c = np.ascontiguousarray(R_in, dtype=np.float64)
    mats_c = np.ascontiguousarray(mats_in, dtype=np.float64)
    cdef double[:, ::1] R = R_c
    cdef double[:, :, ::1] mats = mats_c
    cdef Py_ssize_t m = mats.shape[0], n = mats.shape[1]
    cdef Py_ssize_t p = n * (n + 1) // 2
    out_np = np.empty((m, p), dtype=np.float64)
    cdef double[:, ::1] out = out_np
    cdef double rt2 = sqrt(2.0)
    cdef Py_ssize_t i, a, b, k, t
    cdef double acc
    cdef double[:, :, ::1] B
    if n > 4:
        # gemm territory: batched multiplies, then gather the lower
        # triangle straight into svec order
        B = np.ascontiguousarray(np.matmul(R_c.T, np.matmul(mats_c, R_c)))
        for i in range(m):
            t = 0
            for a in range(n):
                for b in range(a):
                    out[i, t] = B[i, a, b] * rt2
                    t += 1
                out[i, t] = B[i, a, a]
                t += 1
        return out_np
    tmp_np = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] tmp = tmp_np
    for i in range(m):
        # tmp = A_i @ R
        for a in range(n):
            for b in range(n):
                acc = 0.0
                for k in range(n):
                    acc += mats[i, a, k] * R[k, b]
                tmp[a, b] = acc
        # lower triangle of R^T @ tmp, gathered straight into svec order
        t = 0
        for a in range(n):
            for b in range(a):
                acc = 0.0
                for k in range(n):
                    acc += R[k, a] * tmp[k, b]
                out[i, t] = acc * rt2
                t += 1
            acc = 0.0
            for k in range(n):
                acc += R[k, a] * tmp[k, a]
            out[i, t] = acc
            t += 1
    return out_np
