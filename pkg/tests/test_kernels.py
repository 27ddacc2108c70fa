"""Both kernel backends against each other and against finite differences."""

import numpy as np
import pytest

from absapair import kernels

BACKENDS = [kernels.numpy_kernels] + ([kernels.numba_kernels] if kernels.numba_kernels else [])
IDS = [b.name for b in BACKENDS]


@pytest.fixture(params=BACKENDS, ids=IDS)
def K(request):
    return request.param


def fd(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + eps
        hi = f(x)
        x[i] = old - eps
        lo = f(x)
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def test_gelu_values(K):
    x = np.array([[-3.0, -1.0, 0.0, 0.5, 2.0]])
    c = np.sqrt(2 / np.pi)
    expected = 0.5 * x * (1 + np.tanh(c * (x + 0.044715 * x**3)))
    np.testing.assert_allclose(K.gelu(x), expected, rtol=1e-12)


def test_gelu_backward_fd(K, rng):
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 4))
    np.testing.assert_allclose(K.gelu_backward(x, w), fd(lambda z: (K.gelu(z) * w).sum(), x.copy()), rtol=1e-7, atol=1e-9)


def test_layer_norm_forward(K, rng):
    x = rng.normal(size=(2, 3, 8))
    g, b = rng.normal(size=8), rng.normal(size=8)
    y, xhat, rstd = K.layer_norm(x, g, b)
    mu = x.mean(-1, keepdims=True)
    sd = np.sqrt(x.var(-1, keepdims=True) + kernels.LN_EPS)
    np.testing.assert_allclose(y, (x - mu) / sd * g + b, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(xhat.mean(-1), 0, atol=1e-12)


def test_layer_norm_backward_fd(K, rng):
    x = rng.normal(size=(4, 6))
    g, b = rng.normal(size=6), rng.normal(size=6)
    w = rng.normal(size=(4, 6))
    _, xhat, rstd = K.layer_norm(x, g, b)
    dx, dg, db = K.layer_norm_backward(w, xhat, rstd, g)
    np.testing.assert_allclose(dx, fd(lambda z: (K.layer_norm(z, g, b)[0] * w).sum(), x.copy()), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(dg, fd(lambda z: (K.layer_norm(x, z, b)[0] * w).sum(), g.copy()), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(db, fd(lambda z: (K.layer_norm(x, g, z)[0] * w).sum(), b.copy()), rtol=1e-6, atol=1e-8)


def test_masked_softmax(K, rng):
    s = rng.normal(size=(2, 2, 5, 5)) * 5
    mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=np.int32)
    p = K.masked_softmax(s, mask)
    assert np.all(p[0, :, :, 3:] == 0.0)
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-12)
    e = np.exp(s[0, 0, 0, :3] - s[0, 0, 0, :3].max())
    np.testing.assert_allclose(p[0, 0, 0, :3], e / e.sum(), rtol=1e-12)


def test_softmax_backward_fd(K, rng):
    s = rng.normal(size=(1, 1, 3, 4))
    mask = np.array([[1, 1, 1, 0]], dtype=np.int32)
    w = rng.normal(size=s.shape)
    p = K.masked_softmax(s, mask)
    got = K.softmax_backward(p, w)
    np.testing.assert_allclose(got, fd(lambda z: (K.masked_softmax(z, mask) * w).sum(), s.copy()), rtol=1e-6, atol=1e-9)


@pytest.mark.skipif(kernels.numba_kernels is None, reason="numba not installed")
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_backends_agree(rng, dtype):
    a, b = kernels.numpy_kernels, kernels.numba_kernels
    tol = 1e-5 if dtype == np.float32 else 1e-12
    x = rng.normal(size=(6, 16)).astype(dtype)
    dy = rng.normal(size=(6, 16)).astype(dtype)
    g, be = rng.normal(size=16).astype(dtype), rng.normal(size=16).astype(dtype)
    np.testing.assert_allclose(a.gelu(x), b.gelu(x), rtol=tol, atol=tol)
    np.testing.assert_allclose(a.gelu_backward(x, dy), b.gelu_backward(x, dy), rtol=tol, atol=tol)
    ya, xa, ra = a.layer_norm(x, g, be)
    yb, xb, rb = b.layer_norm(x, g, be)
    np.testing.assert_allclose(ya, yb, rtol=tol, atol=tol)
    for u, v in zip(a.layer_norm_backward(dy, xa, ra, g), b.layer_norm_backward(dy, xb, rb, g)):
        np.testing.assert_allclose(u, v, rtol=10 * tol, atol=10 * tol)
    s = rng.normal(size=(2, 2, 7, 7)).astype(dtype)
    mask = (rng.random((2, 7)) < 0.7).astype(np.int32)
    mask[:, 0] = 1
    pa, pb = a.masked_softmax(s, mask), b.masked_softmax(s, mask)
    np.testing.assert_allclose(pa, pb, rtol=tol, atol=tol)
    dp = rng.normal(size=s.shape).astype(dtype)
    np.testing.assert_allclose(a.softmax_backward(pa, dp), b.softmax_backward(pb, dp), rtol=tol, atol=tol)


def test_use_switches_backend():
    before = kernels.BACKEND
    try:
        kernels.use("numpy")
        assert kernels.BACKEND == "numpy"
        with pytest.raises(ValueError):
            kernels.use("fortran")
    finally:
        kernels.use(before)
