"""Kernel-level oracles: naive loop convolution/pool references, plus
bit-level equivalence between the compiled and NumPy backends."""

import numpy as np
import pytest

from unlearnkit import _kernels as K
from unlearnkit._kernels import numpy_backend as NB

try:
    from unlearnkit._kernels import _conv_ops as CY
except ImportError:
    CY = None

BACKENDS = [NB] + ([CY] if CY is not None else [])


def naive_conv2d(x, w, b, pad):
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    oh, ow = h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
    y = np.zeros((n, oh, ow, cout))
    for bi in range(n):
        for i in range(oh):
            for j in range(ow):
                patch = xp[bi, i : i + kh, j : j + kw, :]
                for co in range(cout):
                    y[bi, i, j, co] = np.sum(patch * w[:, :, :, co]) + b[co]
    return y


def naive_maxpool2(x):
    n, h, w, c = x.shape
    y = np.zeros((n, h // 2, w // 2, c))
    for bi in range(n):
        for i in range(h // 2):
            for j in range(w // 2):
                for ch in range(c):
                    y[bi, i, j, ch] = x[bi, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2, ch].max()
    return y


def test_conv_forward_matches_naive(rng):
    x = rng.random((2, 6, 6, 3))
    w = rng.standard_normal((3, 3, 3, 5))
    b = rng.standard_normal(5)
    y, _ = K.conv2d_forward(x, w, b, pad=1)
    assert np.allclose(y, naive_conv2d(x, w, b, 1), atol=1e-12)


def test_conv_forward_no_padding(rng):
    x = rng.random((1, 5, 5, 2))
    w = rng.standard_normal((3, 3, 2, 4))
    b = np.zeros(4)
    y, _ = K.conv2d_forward(x, w, b, pad=0)
    assert y.shape == (1, 3, 3, 4)
    assert np.allclose(y, naive_conv2d(x, w, b, 0), atol=1e-12)


def test_conv_backward_matches_finite_differences(rng):
    x = rng.random((2, 5, 5, 2))
    w = rng.standard_normal((3, 3, 2, 3)) * 0.5
    b = rng.standard_normal(3) * 0.1
    dy = rng.standard_normal((2, 5, 5, 3))

    _, cols = K.conv2d_forward(x, w, b, pad=1)
    dx, dw, db = K.conv2d_backward(cols, w, dy, pad=1, input_hw=(5, 5))

    h = 1e-6

    def loss(xx, ww, bb):
        y, _ = K.conv2d_forward(xx, ww, bb, pad=1)
        return np.sum(y * dy)

    for arr, grad in ((x, dx), (w, dw), (b, db)):
        for _ in range(12):
            idx = tuple(rng.integers(0, d) for d in arr.shape)
            orig = arr[idx]
            arr[idx] = orig + h
            hi = loss(x, w, b)
            arr[idx] = orig - h
            lo = loss(x, w, b)
            arr[idx] = orig
            fd = (hi - lo) / (2 * h)
            assert grad[idx] == pytest.approx(fd, rel=1e-4, abs=1e-7)


def test_conv_backward_input_only(rng):
    x = rng.random((2, 5, 5, 2))
    w = rng.standard_normal((3, 3, 2, 3))
    dy = rng.standard_normal((2, 5, 5, 3))
    _, cols = K.conv2d_forward(x, w, np.zeros(3), pad=1)
    dx_full, dw, db = K.conv2d_backward(cols, w, dy, 1, (5, 5))
    dx_only, dw_none, db_none = K.conv2d_backward(cols, w, dy, 1, (5, 5), need_param_grads=False)
    assert dw_none is None and db_none is None
    assert np.array_equal(dx_full, dx_only)
    assert dw is not None


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda b: b.NAME)
def test_maxpool_matches_naive(backend, rng):
    x = rng.random((3, 8, 8, 4))
    y, idx = backend.maxpool2_forward(x)
    assert np.allclose(y, naive_maxpool2(x), atol=0)
    # routing gradients back puts each dy at its argmax position
    dy = rng.standard_normal(y.shape)
    dx = backend.maxpool2_backward(dy, idx, 8, 8)
    assert np.allclose(dx.sum(axis=(1, 2)), dy.sum(axis=(1, 2)), atol=1e-12)
    assert np.count_nonzero(dx) <= dy.size


def test_maxpool_tie_takes_first_slot():
    x = np.ones((1, 2, 2, 1))
    _, idx = K.maxpool2_forward(x)
    assert idx.ravel()[0] == 0


@pytest.mark.skipif(CY is None, reason="compiled backend unavailable")
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_backends_bit_identical(dtype, rng):
    xp = rng.random((4, 9, 9, 8)).astype(dtype)
    assert np.array_equal(CY.im2col(xp, 3, 3), NB.im2col(xp, 3, 3))

    dcols = rng.standard_normal((4, 7, 7, 3, 3, 8)).astype(dtype)
    assert np.array_equal(CY.col2im(dcols, 9, 9), NB.col2im(dcols, 9, 9))

    x = rng.random((4, 8, 8, 6)).astype(dtype)
    y_c, i_c = CY.maxpool2_forward(x)
    y_n, i_n = NB.maxpool2_forward(x)
    assert np.array_equal(y_c, y_n) and np.array_equal(i_c, i_n)

    dy = rng.standard_normal(y_c.shape).astype(dtype)
    assert np.array_equal(CY.maxpool2_backward(dy, i_c, 8, 8), NB.maxpool2_backward(dy, i_n, 8, 8))
