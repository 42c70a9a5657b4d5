"""Shared dense numerics: stable softmax/softplus, GELU, scaled dot-product
attention with its vector-Jacobian product, seeded generators, and a central
difference gradient checker.

Everything operates on plain float64 numpy arrays; a "matrix" is a 2-D array
in row-major order and a "vector" is 1-D. Outputs are finite whenever inputs
are finite.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

__all__ = [
    "make_rng",
    "softmax",
    "softmax_rows",
    "softplus",
    "gelu",
    "gelu_grad",
    "cross_attention",
    "cross_attention_vjp",
    "fd_grad_check",
]

_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator. Equal seeds give bitwise-equal draw sequences."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def softmax(v) -> np.ndarray:
    """Stable softmax of a vector (the max is subtracted before exponentiating)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty vector")
    e = np.exp(v - v.max())
    return e / e.sum()


def softmax_rows(a) -> np.ndarray:
    """Row-wise stable softmax of a 2-D array."""
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        raise ValueError("empty matrix")
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softplus(x):
    """log(1 + e^x), computed stably for large |x|. Works elementwise."""
    return np.logaddexp(0.0, x)


def gelu(x):
    """Exact (erf-based) GELU."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    """Derivative of the erf-based GELU."""
    x = np.asarray(x, dtype=np.float64)
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


def _check_attention_shapes(q, k, v):
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ValueError("attention inputs must be 2-D")
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"query dim {q.shape[1]} does not match key dim {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"{k.shape[0]} key rows vs {v.shape[0]} value rows")
    if k.shape[0] == 0:
        raise ValueError("attention needs at least one key")


def cross_attention(queries, keys, values) -> np.ndarray:
    """Scaled dot-product attention.

    Each output row i is sum_j w_ij * values[j] with
    w_i = softmax(queries[i] . keys^T / sqrt(d)); weight rows sum to 1.
    """
    q = np.asarray(queries, dtype=np.float64)
    k = np.asarray(keys, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    _check_attention_shapes(q, k, v)
    w = softmax_rows(q @ k.T / np.sqrt(q.shape[1]))
    return w @ v


def cross_attention_vjp(queries, keys, values, dout):
    """Gradients of cross_attention w.r.t. (queries, keys, values) given dL/dout."""
    q = np.asarray(queries, dtype=np.float64)
    k = np.asarray(keys, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    _check_attention_shapes(q, k, v)
    scale = 1.0 / np.sqrt(q.shape[1])
    w = softmax_rows(q @ k.T * scale)
    dv = w.T @ dout
    dw = dout @ v.T
    da = w * (dw - np.sum(dw * w, axis=1, keepdims=True))
    dq = da @ k * scale
    dk = da.T @ q * scale
    return dq, dk, dv


def fd_grad_check(f, analytic_grad, point, step: float = 1e-5) -> float:
    """Central-difference check of an analytic gradient.

    Compares (f(p + h e_i) - f(p - h e_i)) / 2h against analytic_grad[i] and
    returns the worst |difference| / max(1, |analytic|) over coordinates; the
    mixed denominator keeps the check meaningful near zero gradients.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    point = np.asarray(point, dtype=np.float64).ravel()
    grad = np.asarray(analytic_grad, dtype=np.float64).ravel()
    if point.shape != grad.shape:
        raise ValueError("gradient and point must have the same length")
    worst = 0.0
    for i in range(point.size):
        hi = point.copy()
        lo = point.copy()
        hi[i] += step
        lo[i] -= step
        f_hi = float(f(hi))
        f_lo = float(f(lo))
        if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
            raise ValueError("non-finite function value in gradient check")
        fd = (f_hi - f_lo) / (2.0 * step)
        err = abs(fd - grad[i]) / max(1.0, abs(grad[i]))
        if err > worst:
            worst = err
    return worst
