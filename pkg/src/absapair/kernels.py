"""Elementwise and row-wise kernels of the encoder, forward and backward.

Two interchangeable implementations are provided: `numpy_kernels` (always
available) and `numba_kernels` (JIT-compiled row reductions, when numba
imports; it reuses the numpy GELU and masked softmax, which vectorise better).
The module-level functions dispatch to the one chosen at import time:

    ABSAPAIR_NUMBA=0   force the pure-numpy path
    ABSAPAIR_NUMBA=1   require numba (ImportError if missing)
    unset              numba when importable, else numpy

Both paths compute the same formulas; they agree to rounding error.
"""

import math
import os
from types import SimpleNamespace

import numpy as np

LN_EPS = 1e-12
_GELU_C = math.sqrt(2.0 / math.pi)


# ---------------------------------------------------------------------------
# numpy


def _np_gelu(x):
    # tanh approximation, as in the reference BERT code
    u = _GELU_C * (x + 0.044715 * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def _np_gelu_backward(x, dy):
    x2 = x * x
    t = np.tanh(_GELU_C * (x + 0.044715 * x2 * x))
    grad = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x2)
    return dy * grad


def _np_layer_norm(x, gamma, beta, eps=LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd


def _np_layer_norm_backward(dy, xhat, rstd, gamma):
    h = xhat.shape[-1]
    dxhat = dy * gamma
    dx = rstd * (dxhat - dxhat.sum(-1, keepdims=True) / h - xhat * (dxhat * xhat).sum(-1, keepdims=True) / h)
    axes = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=axes), dy.sum(axis=axes)


def _np_masked_softmax(scores, key_mask):
    """Softmax over the last axis of (B, A, Tq, Tk); masked keys get exactly 0."""
    keep = key_mask[:, None, None, :].astype(bool)
    s = np.where(keep, scores, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def _np_softmax_backward(p, dp):
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))


numpy_kernels = SimpleNamespace(
    name="numpy",
    gelu=_np_gelu,
    gelu_backward=_np_gelu_backward,
    layer_norm=_np_layer_norm,
    layer_norm_backward=_np_layer_norm_backward,
    masked_softmax=_np_masked_softmax,
    softmax_backward=_np_softmax_backward,
)


# ---------------------------------------------------------------------------
# numba


def _build_numba_kernels():
    from numba import njit

    @njit(cache=True)
    def layer_norm_2d(x, gamma, beta, eps):
        n, h = x.shape
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        rstd = np.empty((n, 1), dtype=x.dtype)
        for i in range(n):
            mu = 0.0
            for j in range(h):
                mu += x[i, j]
            mu /= h
            var = 0.0
            for j in range(h):
                d = x[i, j] - mu
                var += d * d
            var /= h
            r = 1.0 / math.sqrt(var + eps)
            rstd[i, 0] = r
            for j in range(h):
                xh = (x[i, j] - mu) * r
                xhat[i, j] = xh
                y[i, j] = xh * gamma[j] + beta[j]
        return y, xhat, rstd

    @njit(cache=True)
    def layer_norm_backward_2d(dy, xhat, rstd, gamma):
        n, h = dy.shape
        dx = np.empty_like(dy)
        dgamma = np.zeros(h, dtype=dy.dtype)
        dbeta = np.zeros(h, dtype=dy.dtype)
        for i in range(n):
            s1 = 0.0
            s2 = 0.0
            for j in range(h):
                g = dy[i, j] * gamma[j]
                s1 += g
                s2 += g * xhat[i, j]
                dgamma[j] += dy[i, j] * xhat[i, j]
                dbeta[j] += dy[i, j]
            s1 /= h
            s2 /= h
            r = rstd[i, 0]
            for j in range(h):
                dx[i, j] = r * (dy[i, j] * gamma[j] - s1 - xhat[i, j] * s2)
        return dx, dgamma, dbeta

    @njit(cache=True)
    def softmax_backward_4d(p, dp):
        b_, a_, tq, tk = p.shape
        out = np.empty_like(p)
        for b in range(b_):
            for a in range(a_):
                for q in range(tq):
                    s = 0.0
                    for k in range(tk):
                        s += dp[b, a, q, k] * p[b, a, q, k]
                    for k in range(tk):
                        out[b, a, q, k] = p[b, a, q, k] * (dp[b, a, q, k] - s)
        return out

    def layer_norm(x, gamma, beta, eps=LN_EPS):
        shape = x.shape
        y, xhat, rstd = layer_norm_2d(
            np.ascontiguousarray(x.reshape(-1, shape[-1])), gamma, beta, x.dtype.type(eps)
        )
        return y.reshape(shape), xhat.reshape(shape), rstd.reshape(shape[:-1] + (1,))

    def layer_norm_backward(dy, xhat, rstd, gamma):
        shape = dy.shape
        h = shape[-1]
        dx, dg, db = layer_norm_backward_2d(
            np.ascontiguousarray(dy.reshape(-1, h)),
            np.ascontiguousarray(xhat.reshape(-1, h)),
            np.ascontiguousarray(rstd.reshape(-1, 1)),
            gamma,
        )
        return dx.reshape(shape), dg, db

    def softmax_backward(p, dp):
        return softmax_backward_4d(np.ascontiguousarray(p), np.ascontiguousarray(dp))

    return SimpleNamespace(
        name="numba",
        # numpy's SIMD tanh/exp beat a scalar jitted loop for these
        gelu=_np_gelu,
        gelu_backward=_np_gelu_backward,
        layer_norm=layer_norm,
        layer_norm_backward=layer_norm_backward,
        masked_softmax=_np_masked_softmax,
        softmax_backward=softmax_backward,
    )


def _select():
    flag = os.environ.get("ABSAPAIR_NUMBA", "").strip().lower()
    if flag in ("0", "false", "no", "off"):
        return numpy_kernels, None
    try:
        nb = _build_numba_kernels()
    except ImportError:
        if flag in ("1", "true", "yes", "on"):
            raise
        return numpy_kernels, None
    return nb, nb


active, numba_kernels = _select()
BACKEND = active.name


def use(name):
    """Switch the active backend at runtime ("numpy" or "numba")."""
    global active, BACKEND
    if name == "numpy":
        active = numpy_kernels
    elif name == "numba":
        if numba_kernels is None:
            raise RuntimeError("numba backend unavailable")
        active = numba_kernels
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    BACKEND = active.name


def gelu(x):
    return active.gelu(x)


def gelu_backward(x, dy):
    return active.gelu_backward(x, dy)


def layer_norm(x, gamma, beta, eps=LN_EPS):
    return active.layer_norm(x, gamma, beta, eps)


def layer_norm_backward(dy, xhat, rstd, gamma):
    return active.layer_norm_backward(dy, xhat, rstd, gamma)


def masked_softmax(scores, key_mask):
    return active.masked_softmax(scores, key_mask)


def softmax_backward(p, dp):
    return active.softmax_backward(p, dp)
