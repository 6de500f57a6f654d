"""Numpy reference implementations of the hot kernels.

This backend defines the semantics; the compiled backend in ``_hot.pyx``
must agree with it to float64 rounding. All functions take and return
C-contiguous float64 arrays.

Shape conventions:
  * ``matmul``: ``(m, k) @ (k, n)`` or ``(B, m, k) @ (B, k, n)``.
  * ``softmax_lastdim`` / ``layernorm``: any leading shape, reduce over the
    last axis.
"""

import numpy as np
from scipy.special import erf

NAME = "numpy"

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def matmul(a, b):
    return np.matmul(a, b)


def softmax_lastdim(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_bwd(y, dy):
    # dx = y * (dy - sum(y * dy)) per last-dim slice
    inner = (y * dy).sum(axis=-1, keepdims=True)
    return y * (dy - inner)


def gelu_fwd(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_bwd(x, dy):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return dy * (cdf + x * pdf)


def layernorm_fwd(x, gamma, beta, eps):
    """Normalize over the last axis. Returns (y, mean, rstd)."""
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mean) * rstd * gamma + beta
    return y, mean, rstd


def layernorm_bwd(x, gamma, mean, rstd, dy):
    """Returns (dx, dgamma, dbeta); dgamma/dbeta summed over leading axes."""
    xhat = (x - mean) * rstd
    dg = dy * gamma
    n = x.shape[-1]
    dx = rstd * (dg - dg.mean(axis=-1, keepdims=True) - xhat * (dg * xhat).mean(axis=-1, keepdims=True))
    axes = tuple(range(x.ndim - 1))
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    return dx, dgamma, dbeta
