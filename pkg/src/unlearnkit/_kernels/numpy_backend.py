"""Pure NumPy implementations of the convolution/pool data-movement kernels.

The heavy arithmetic (the GEMMs) stays in BLAS either way; these kernels only
gather and scatter patches. The compiled backend in ``_conv_ops.pyx`` mirrors
the accumulation order used here so both backends round identically.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "numpy"


def im2col(xp, kh, kw):
    """Gather (kh, kw) patches of a padded NHWC batch.

    Returns a C-contiguous array of shape (N, OH, OW, kh, kw, C) with
    OH = Hp - kh + 1, OW = Wp - kw + 1 (stride 1).
    """
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    # windows: (N, OH, OW, C, kh, kw) -> (N, OH, OW, kh, kw, C)
    return np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3))


def col2im(dcols, hp, wp):
    """Scatter-add patch gradients back onto the padded input.

    dcols has shape (N, OH, OW, kh, kw, C); returns (N, hp, wp, C).
    Accumulates in (kh, kw) order; the compiled backend matches this order.
    """
    n, oh, ow, kh, kw, c = dcols.shape
    dxp = np.zeros((n, hp, wp, c), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + oh, j : j + ow, :] += dcols[:, :, :, i, j, :]
    return dxp


def maxpool2_forward(x):
    """2x2/stride-2 max pool of an NHWC batch with even H and W.

    Returns (y, idx) where idx in [0, 4) records the argmax slot per cell,
    scanned row-major over the window; ties take the first occurrence.
    """
    stacked = np.stack(
        [
            x[:, 0::2, 0::2, :],
            x[:, 0::2, 1::2, :],
            x[:, 1::2, 0::2, :],
            x[:, 1::2, 1::2, :],
        ],
        axis=0,
    )
    idx = np.argmax(stacked, axis=0).astype(np.int8)
    y = np.take_along_axis(stacked, idx[None].astype(np.intp), axis=0)[0]
    return np.ascontiguousarray(y), idx


def maxpool2_backward(dy, idx, h, w):
    """Route pooled gradients back to the argmax positions."""
    n, h2, w2, c = dy.shape
    dx = np.zeros((n, h, w, c), dtype=dy.dtype)
    for slot in range(4):
        i, j = divmod(slot, 2)
        dx[:, i::2, j::2, :] = np.where(idx == slot, dy, 0)
    return dx
