# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled patch gather/scatter and 2x2 max-pool kernels.

Same contracts as numpy_backend. Inner loops run over contiguous spans, and
col2im keeps the (kh, kw)-outer accumulation order of the numpy backend so
the two backends round identically.
"""

import numpy as np

cimport numpy as cnp
from libc.string cimport memcpy

cnp.import_array()

ctypedef fused real:
    float
    double

NAME = "cython"


def im2col(real[:, :, :, ::1] xp, Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t n = xp.shape[0], hp = xp.shape[1], wp = xp.shape[2], c = xp.shape[3]
    cdef Py_ssize_t oh = hp - kh + 1, ow = wp - kw + 1
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n, oh, ow, kh, kw, c), dtype=dtype)
    cdef real[:, :, :, :, :, ::1] cols = out
    cdef Py_ssize_t b, i, j, p
    cdef Py_ssize_t span = kw * c * sizeof(real)
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                for p in range(kh):
                    # (q, ch) block is one contiguous run of the padded row
                    memcpy(&cols[b, i, j, p, 0, 0], &xp[b, i + p, j, 0], span)
    return out


def col2im(real[:, :, :, :, :, ::1] dcols, Py_ssize_t hp, Py_ssize_t wp):
    cdef Py_ssize_t n = dcols.shape[0], oh = dcols.shape[1], ow = dcols.shape[2]
    cdef Py_ssize_t kh = dcols.shape[3], kw = dcols.shape[4], c = dcols.shape[5]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, hp, wp, c), dtype=dtype)
    cdef real[:, :, :, ::1] dxp = out
    cdef Py_ssize_t p, q, b, i, j, ch
    cdef real* dst
    cdef real* src
    # (kh, kw) outermost to match the numpy backend's accumulation order
    for p in range(kh):
        for q in range(kw):
            for b in range(n):
                for i in range(oh):
                    dst = &dxp[b, i + p, q, 0]
                    src = &dcols[b, i, 0, p, q, 0]
                    for j in range(ow):
                        for ch in range(c):
                            dst[j * c + ch] += src[j * kh * kw * c + ch]
    return out


def maxpool2_forward(real[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t h2 = h // 2, w2 = w // 2
    dtype = np.float32 if real is float else np.float64
    yout = np.empty((n, h2, w2, c), dtype=dtype)
    iout = np.empty((n, h2, w2, c), dtype=np.int8)
    cdef real[:, :, :, ::1] y = yout
    cdef signed char[:, :, :, ::1] idx = iout
    cdef Py_ssize_t b, i, j, ch
    cdef real best, v
    cdef signed char arg
    for b in range(n):
        for i in range(h2):
            for j in range(w2):
                for ch in range(c):
                    best = x[b, 2 * i, 2 * j, ch]
                    arg = 0
                    v = x[b, 2 * i, 2 * j + 1, ch]
                    if v > best:
                        best = v
                        arg = 1
                    v = x[b, 2 * i + 1, 2 * j, ch]
                    if v > best:
                        best = v
                        arg = 2
                    v = x[b, 2 * i + 1, 2 * j + 1, ch]
                    if v > best:
                        best = v
                        arg = 3
                    y[b, i, j, ch] = best
                    idx[b, i, j, ch] = arg
    return yout, iout


def maxpool2_backward(real[:, :, :, ::1] dy, signed char[:, :, :, ::1] idx,
                      Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = dy.shape[0], h2 = dy.shape[1], w2 = dy.shape[2], c = dy.shape[3]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, h, w, c), dtype=dtype)
    cdef real[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, i, j, ch
    cdef signed char slot
    for b in range(n):
        for i in range(h2):
            for j in range(w2):
                for ch in range(c):
                    slot = idx[b, i, j, ch]
                    dx[b, 2 * i + slot // 2, 2 * j + slot % 2, ch] = dy[b, i, j, ch]
    return out
