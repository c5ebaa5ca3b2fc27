"""Convolution and pooling kernels with a compiled fast path.

The compiled Cython backend is used when its extension module imported
successfully; otherwise (or when UNLEARNKIT_KERNELS=numpy is set) the pure
NumPy backend takes over. Both expose the same four primitives and round
identically, so the choice never changes results.
"""

import os

import numpy as np

from . import numpy_backend

if os.environ.get("UNLEARNKIT_KERNELS", "").lower() == "numpy":
    _impl = numpy_backend
else:
    try:
        from . import _conv_ops as _impl
    except ImportError:
        _impl = numpy_backend

BACKEND = _impl.NAME

im2col = _impl.im2col
col2im = _impl.col2im
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward


def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))


def conv2d_forward(x, w, b, pad):
    """Stride-1 cross-correlation of NHWC inputs with a (kh, kw, cin, cout) filter."""
    kh, kw, cin, cout = w.shape
    cols = im2col(_pad(x, pad), kh, kw)
    n, oh, ow = cols.shape[:3]
    y = cols.reshape(n * oh * ow, kh * kw * cin) @ w.reshape(kh * kw * cin, cout)
    y += b
    return y.reshape(n, oh, ow, cout), cols


def conv2d_backward(cols, w, dy, pad, input_hw, need_param_grads=True):
    """Gradients of conv2d_forward w.r.t. input, filter, and bias.

    `cols` is the patch tensor returned by the forward pass; `input_hw` is the
    unpadded (H, W) of the input. When need_param_grads is false the filter
    and bias gradients are skipped (returned as None), which the attack loop
    uses to avoid the largest GEMMs.
    """
    kh, kw, cin, cout = w.shape
    n, oh, ow = dy.shape[:3]
    dymat = dy.reshape(n * oh * ow, cout)
    dw = db = None
    if need_param_grads:
        colmat = cols.reshape(n * oh * ow, kh * kw * cin)
        dw = (colmat.T @ dymat).reshape(w.shape)
        db = dymat.sum(axis=0)
    dcols = (dymat @ w.reshape(kh * kw * cin, cout).T).reshape(n, oh, ow, kh, kw, cin)
    h, wd = input_hw
    dxp = col2im(np.ascontiguousarray(dcols), h + 2 * pad, wd + 2 * pad)
    dx = dxp[:, pad : pad + h, pad : pad + wd, :] if pad else dxp
    return np.ascontiguousarray(dx), dw, db
