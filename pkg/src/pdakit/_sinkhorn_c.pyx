# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled two-column scaling kernel: one fused pass per update with no
intermediate allocations.  Semantics match _sinkhorn_py.scale_columns."""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, isfinite


def scale_columns(double[:, ::1] A, double[:, ::1] B,
                  double[:, ::1] K1, double[:, ::1] K2,
                  int max_iters, double tol):
    cdef Py_ssize_t n = A.shape[0]
    cdef cnp.ndarray[double, ndim=2] U_arr = np.ones((n, 2))
    cdef cnp.ndarray[double, ndim=2] V_arr = np.ones((n, 2))
    cdef double[:, ::1] U = U_arr
    cdef double[:, ::1] V = V_arr
    cdef double k00 = K2[0, 0], k01 = K2[0, 1], k10 = K2[1, 0], k11 = K2[1, 1]
    cdef Py_ssize_t it = 0, i, j
    cdef double s0, s1, d0, d1, u0, u1, delta, diff, residual
    cdef bint converged = False, finite = True

    while it < max_iters:
        it += 1
        delta = 0.0
        for i in range(n):
            s0 = 0.0
            s1 = 0.0
            for j in range(n):
                s0 += K1[i, j] * V[j, 0]
                s1 += K1[i, j] * V[j, 1]
            d0 = s0 * k00 + s1 * k01
            d1 = s0 * k10 + s1 * k11
            u0 = A[i, 0] / d0
            u1 = A[i, 1] / d1
            diff = fabs(u0 - U[i, 0])
            if diff > delta:
                delta = diff
            diff = fabs(u1 - U[i, 1])
            if diff > delta:
                delta = diff
            U[i, 0] = u0
            U[i, 1] = u1
            if not (isfinite(u0) and isfinite(u1)):
                finite = False
        if finite:
            for i in range(n):
                s0 = 0.0
                s1 = 0.0
                for j in range(n):
                    s0 += K1[i, j] * U[j, 0]
                    s1 += K1[i, j] * U[j, 1]
                V[i, 0] = B[i, 0] / (s0 * k00 + s1 * k01)
                V[i, 1] = B[i, 1] / (s0 * k10 + s1 * k11)
                if not (isfinite(V[i, 0]) and isfinite(V[i, 1])):
                    finite = False
        if not finite:
            from pdakit._sinkhorn_py import SinkhornNumericalError
            raise SinkhornNumericalError(
                f"non-finite scaling entries at iteration {it} (n={n})"
            )
        if delta <= tol:
            residual = 0.0
            for i in range(n):
                s0 = 0.0
                s1 = 0.0
                for j in range(n):
                    s0 += K1[i, j] * V[j, 0]
                    s1 += K1[i, j] * V[j, 1]
                diff = fabs(A[i, 0] - U[i, 0] * (s0 * k00 + s1 * k01))
                if diff > residual:
                    residual = diff
                diff = fabs(A[i, 1] - U[i, 1] * (s0 * k10 + s1 * k11))
                if diff > residual:
                    residual = diff
            if residual <= 10.0 * tol:
                converged = True
                break
    return U_arr, V_arr, it, converged
