# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled log-domain kernels for the IPFP inner loop.

Built with ``-ffast-math`` so that gcc emits glibc's vectorised ``exp``.
Inputs must therefore be finite; no kernel seeds a reduction with an
infinity. Every routine sweeps the matrix in row-major order with a fixed
reduction order, so results are reproducible for a given binary.
"""

import numpy as np

from libc.math cimport exp, log


cdef inline double _row_max(const double* k, const double* shift, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t j
    cdef double m = k[0] + shift[0], v
    for j in range(1, n):
        v = k[j] + shift[j]
        m = v if v > m else m
    return m


cdef inline double _row_sumexp(const double* k, const double* shift, double c,
                               Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t j
    cdef double s = 0.0
    for j in range(n):
        s += exp(k[j] + shift[j] - c)
    return s


def lse_rows(const double[:, ::1] K, const double[::1] shift, double[::1] out):
    """``out[i] = log sum_j exp(K[i, j] + shift[j])``."""
    cdef Py_ssize_t n1 = K.shape[0], n2 = K.shape[1]
    cdef Py_ssize_t i
    cdef double m
    if shift.shape[0] != n2 or out.shape[0] != n1:
        raise ValueError("shape mismatch in lse_rows")
    if n2 == 0:
        raise ValueError("empty kernel")
    with nogil:
        for i in range(n1):
            m = _row_max(&K[i, 0], &shift[0], n2)
            out[i] = m + log(_row_sumexp(&K[i, 0], &shift[0], m, n2))


def lse_cols(const double[:, ::1] K, const double[::1] shift, double[::1] out):
    """``out[j] = log sum_i exp(K[i, j] + shift[i])``."""
    cdef Py_ssize_t n1 = K.shape[0], n2 = K.shape[1]
    cdef Py_ssize_t i, j
    cdef double v, r
    if shift.shape[0] != n1 or out.shape[0] != n2:
        raise ValueError("shape mismatch in lse_cols")
    if n1 == 0:
        raise ValueError("empty kernel")
    m_arr = np.empty(n2)
    s_arr = np.zeros(n2)
    cdef double[::1] m = m_arr
    cdef double[::1] s = s_arr
    with nogil:
        r = shift[0]
        for j in range(n2):
            m[j] = K[0, j] + r
        for i in range(1, n1):
            r = shift[i]
            for j in range(n2):
                v = K[i, j] + r
                m[j] = v if v > m[j] else m[j]
        for i in range(n1):
            r = shift[i]
            for j in range(n2):
                s[j] += exp(K[i, j] + r - m[j])
        for j in range(n2):
            out[j] = m[j] + log(s[j])


def gibbs(const double[:, ::1] K, const double[::1] alpha, const double[::1] beta,
          double[:, ::1] out):
    """Fill ``out = exp(K + alpha[:, None] + beta[None, :] - c)``; return ``c``.

    ``c`` is the maximum exponent, so every entry of ``out`` lies in (0, 1].
    """
    cdef Py_ssize_t n1 = K.shape[0], n2 = K.shape[1]
    cdef Py_ssize_t i, j
    cdef double c, a, m
    if alpha.shape[0] != n1 or beta.shape[0] != n2:
        raise ValueError("shape mismatch in gibbs")
    if out.shape[0] != n1 or out.shape[1] != n2:
        raise ValueError("output shape mismatch in gibbs")
    if n1 == 0 or n2 == 0:
        raise ValueError("empty kernel")
    with nogil:
        c = alpha[0] + _row_max(&K[0, 0], &beta[0], n2)
        for i in range(1, n1):
            m = alpha[i] + _row_max(&K[i, 0], &beta[0], n2)
            c = m if m > c else c
        for i in range(n1):
            a = alpha[i] - c
            for j in range(n2):
                out[i, j] = exp(K[i, j] + a + beta[j])
    return c
