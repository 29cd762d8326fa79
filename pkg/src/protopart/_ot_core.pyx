# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled log-domain Sinkhorn kernel.

Same contract as ``protopart._ot_fallback.sinkhorn_log_kernel``; this version
runs the row/column updates as tight C loops, which dominates stage-1
training time on large batches.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log

cnp.import_array()


cdef double _lse_row(double[:, ::1] sk, double[::1] psi, Py_ssize_t i) noexcept nogil:
    cdef Py_ssize_t j, k = sk.shape[1]
    cdef double m = -1e308
    cdef double s = 0.0
    cdef double v
    for j in range(k):
        v = sk[i, j] + psi[j]
        if v > m:
            m = v
    for j in range(k):
        s += exp(sk[i, j] + psi[j] - m)
    return m + log(s)


cdef double _lse_col(double[:, ::1] sk, double[::1] phi, Py_ssize_t j) noexcept nogil:
    cdef Py_ssize_t i, n = sk.shape[0]
    cdef double m = -1e308
    cdef double s = 0.0
    cdef double v
    for i in range(n):
        v = sk[i, j] + phi[i]
        if v > m:
            m = v
    for i in range(n):
        s += exp(sk[i, j] + phi[i] - m)
    return m + log(s)


def sinkhorn_log_kernel(double[:, ::1] sk, int max_iters, double tol, double[::1] hist):
    cdef Py_ssize_t n = sk.shape[0]
    cdef Py_ssize_t k = sk.shape[1]
    cdef double log_a = -log(<double> n)
    cdef double log_b = -log(<double> k)
    cdef cnp.ndarray[double, ndim=1] phi_arr = np.zeros(n)
    cdef cnp.ndarray[double, ndim=1] psi_arr = np.zeros(k)
    cdef double[::1] phi = phi_arr
    cdef double[::1] psi = psi_arr
    cdef Py_ssize_t i, j, t
    cdef int iters = 0
    cdef bint converged = False
    cdef double resid = np.inf
    cdef double row_sum, col_sum, dev, m, s, v

    with nogil:
        for t in range(max_iters):
            for i in range(n):
                phi[i] = log_a - _lse_row(sk, psi, i)
            for j in range(k):
                psi[j] = log_b - _lse_col(sk, phi, j)
            # residual: worst deviation of row sums from 1/N and column
            # sums from 1/K, computed stably in the log domain per line
            resid = 0.0
            for i in range(n):
                m = -1e308
                for j in range(k):
                    v = sk[i, j] + phi[i] + psi[j]
                    if v > m:
                        m = v
                s = 0.0
                for j in range(k):
                    s += exp(sk[i, j] + phi[i] + psi[j] - m)
                row_sum = exp(m + log(s))
                dev = fabs(row_sum - 1.0 / <double> n)
                if dev > resid:
                    resid = dev
            for j in range(k):
                m = -1e308
                for i in range(n):
                    v = sk[i, j] + phi[i] + psi[j]
                    if v > m:
                        m = v
                s = 0.0
                for i in range(n):
                    s += exp(sk[i, j] + phi[i] + psi[j] - m)
                col_sum = exp(m + log(s))
                dev = fabs(col_sum - 1.0 / <double> k)
                if dev > resid:
                    resid = dev
            hist[t] = resid
            iters = t + 1
            if resid < tol:
                converged = True
                break

    return phi_arr, psi_arr, iters, bool(converged), resid
