# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: BLAS-backed matmul plus fused softmax/GELU/layernorm.

Semantics match ``mvdiff.kernels.reference`` (the numpy backend) to float64
rounding; the win is fewer temporaries and less per-call overhead at the
small desk-scale shapes this project runs at.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport erf, exp, sqrt
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

NAME = "compiled"

cdef double INV_SQRT2 = 0.7071067811865476
cdef double INV_SQRT_2PI = 0.3989422804014327


cdef void _gemm(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c) noexcept nogil:
    # Row-major C = A @ B via column-major BLAS: C^T = B^T A^T.
    cdef int m = a.shape[0]
    cdef int k = a.shape[1]
    cdef int n = b.shape[1]
    cdef double one = 1.0, zero = 0.0
    cdef char nt = b'N'
    if m == 0 or n == 0 or k == 0:
        return
    dgemm(&nt, &nt, &n, &m, &k, &one, &b[0, 0], &n, &a[0, 0], &k, &zero, &c[0, 0], &n)


def matmul(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t i
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul: inner dims disagree {a.shape} @ {b.shape}")
        out = np.empty((a.shape[0], b.shape[1]), dtype=np.float64)
        _gemm(a, b, out)
        return out
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] == b.shape[0]:
        if a.shape[2] != b.shape[1]:
            raise ValueError(f"matmul: inner dims disagree {a.shape} @ {b.shape}")
        out = np.empty((a.shape[0], a.shape[1], b.shape[2]), dtype=np.float64)
        for i in range(a.shape[0]):
            _gemm(a[i], b[i], out[i])
        return out
    # Broadcast or higher-rank cases are not on the hot path.
    return np.matmul(a, b)


cdef void _softmax_rows(double[:, ::1] x, double[:, ::1] y) noexcept nogil:
    cdef Py_ssize_t r, j
    cdef Py_ssize_t n_rows = x.shape[0], n = x.shape[1]
    cdef double m, s
    for r in range(n_rows):
        m = x[r, 0]
        for j in range(1, n):
            if x[r, j] > m:
                m = x[r, j]
        s = 0.0
        for j in range(n):
            y[r, j] = exp(x[r, j] - m)
            s += y[r, j]
        for j in range(n):
            y[r, j] /= s


def softmax_lastdim(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    shape = x.shape
    x2 = x.reshape(-1, shape[-1])
    out = np.empty_like(x2)
    _softmax_rows(x2, out)
    return out.reshape(shape)


cdef void _softmax_bwd_rows(double[:, ::1] y, double[:, ::1] dy, double[:, ::1] dx) noexcept nogil:
    cdef Py_ssize_t r, j
    cdef Py_ssize_t n_rows = y.shape[0], n = y.shape[1]
    cdef double inner
    for r in range(n_rows):
        inner = 0.0
        for j in range(n):
            inner += y[r, j] * dy[r, j]
        for j in range(n):
            dx[r, j] = y[r, j] * (dy[r, j] - inner)


def softmax_bwd(y, dy):
    y = np.ascontiguousarray(y, dtype=np.float64)
    dy = np.ascontiguousarray(dy, dtype=np.float64)
    shape = y.shape
    y2 = y.reshape(-1, shape[-1])
    dy2 = dy.reshape(-1, shape[-1])
    dx = np.empty_like(y2)
    _softmax_bwd_rows(y2, dy2, dx)
    return dx.reshape(shape)


cdef void _gelu_fwd(double[::1] x, double[::1] y) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        y[i] = 0.5 * x[i] * (1.0 + erf(x[i] * INV_SQRT2))


def gelu_fwd(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(x)
    _gelu_fwd(x.reshape(-1), out.reshape(-1))
    return out


cdef void _gelu_bwd(double[::1] x, double[::1] dy, double[::1] dx) noexcept nogil:
    cdef Py_ssize_t i
    cdef double cdf, pdf
    for i in range(x.shape[0]):
        cdf = 0.5 * (1.0 + erf(x[i] * INV_SQRT2))
        pdf = INV_SQRT_2PI * exp(-0.5 * x[i] * x[i])
        dx[i] = dy[i] * (cdf + x[i] * pdf)


def gelu_bwd(x, dy):
    x = np.ascontiguousarray(x, dtype=np.float64)
    dy = np.ascontiguousarray(dy, dtype=np.float64)
    dx = np.empty_like(x)
    _gelu_bwd(x.reshape(-1), dy.reshape(-1), dx.reshape(-1))
    return dx


cdef void _ln_fwd(double[:, ::1] x, double[::1] gamma, double[::1] beta, double eps,
                  double[:, ::1] y, double[::1] mean, double[::1] rstd) noexcept nogil:
    cdef Py_ssize_t r, j
    cdef Py_ssize_t n_rows = x.shape[0], n = x.shape[1]
    cdef double mu, var, d, rs
    for r in range(n_rows):
        mu = 0.0
        for j in range(n):
            mu += x[r, j]
        mu /= n
        var = 0.0
        for j in range(n):
            d = x[r, j] - mu
            var += d * d
        var /= n
        rs = 1.0 / sqrt(var + eps)
        mean[r] = mu
        rstd[r] = rs
        for j in range(n):
            y[r, j] = (x[r, j] - mu) * rs * gamma[j] + beta[j]


def layernorm_fwd(x, gamma, beta, eps):
    x = np.ascontiguousarray(x, dtype=np.float64)
    gamma = np.ascontiguousarray(gamma, dtype=np.float64)
    beta = np.ascontiguousarray(beta, dtype=np.float64)
    shape = x.shape
    x2 = x.reshape(-1, shape[-1])
    y = np.empty_like(x2)
    mean = np.empty(x2.shape[0], dtype=np.float64)
    rstd = np.empty(x2.shape[0], dtype=np.float64)
    _ln_fwd(x2, gamma, beta, eps, y, mean, rstd)
    lead = shape[:-1] + (1,)
    return y.reshape(shape), mean.reshape(lead), rstd.reshape(lead)


cdef void _ln_bwd(double[:, ::1] x, double[::1] gamma, double[::1] mean, double[::1] rstd,
                  double[:, ::1] dy, double[:, ::1] dx,
                  double[::1] dgamma, double[::1] dbeta) noexcept nogil:
    cdef Py_ssize_t r, j
    cdef Py_ssize_t n_rows = x.shape[0], n = x.shape[1]
    cdef double mu, rs, m1, m2, xh, dg
    for r in range(n_rows):
        mu = mean[r]
        rs = rstd[r]
        m1 = 0.0
        m2 = 0.0
        for j in range(n):
            xh = (x[r, j] - mu) * rs
            dg = dy[r, j] * gamma[j]
            m1 += dg
            m2 += dg * xh
            dgamma[j] += dy[r, j] * xh
            dbeta[j] += dy[r, j]
        m1 /= n
        m2 /= n
        for j in range(n):
            xh = (x[r, j] - mu) * rs
            dx[r, j] = rs * (dy[r, j] * gamma[j] - m1 - xh * m2)


def layernorm_bwd(x, gamma, mean, rstd, dy):
    x = np.ascontiguousarray(x, dtype=np.float64)
    gamma = np.ascontiguousarray(gamma, dtype=np.float64)
    dy = np.ascontiguousarray(dy, dtype=np.float64)
    shape = x.shape
    n = shape[-1]
    x2 = x.reshape(-1, n)
    dy2 = dy.reshape(-1, n)
    mean2 = np.ascontiguousarray(mean, dtype=np.float64).reshape(-1)
    rstd2 = np.ascontiguousarray(rstd, dtype=np.float64).reshape(-1)
    dx = np.empty_like(x2)
    dgamma = np.zeros(n, dtype=np.float64)
    dbeta = np.zeros(n, dtype=np.float64)
    _ln_bwd(x2, gamma, mean2, rstd2, dy2, dx, dgamma, dbeta)
    return dx.reshape(shape), dgamma, dbeta
