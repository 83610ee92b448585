"""Pure-numpy conv2d kernels based on column unfolding plus BLAS contractions.

This is the fallback used when the compiled extension is unavailable. Both
backends share the same call signatures and NCHW layout.
"""

import numpy as np


def output_hw(h: int, w: int, kh: int, kw: int, stride: int, padding: int) -> tuple[int, int]:
    return (h + 2 * padding - kh) // stride + 1, (w + 2 * padding - kw) // stride + 1


def _unfold(xp, kh, kw, stride, out_h, out_w):
    # (N, C, H, W) -> (N, C, kh, kw, out_h, out_w) via kh*kw strided slices
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, out_h, out_w), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[
                :, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride
            ]
    return cols


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d_forward(x, weight, bias, stride, padding):
    """Cross-correlate a batch (N, C_in, H, W) with weights (C_out, C_in, kh, kw)."""
    _, _, h, w = x.shape
    c_out, _, kh, kw = weight.shape
    out_h, out_w = output_hw(h, w, kh, kw, stride, padding)
    cols = _unfold(_pad(x, padding), kh, kw, stride, out_h, out_w)
    y = np.einsum("ocij,ncijpq->nopq", weight, cols, optimize=True)
    if bias is not None:
        y += bias[None, :, None, None]
    return y


def conv2d_backward(x, weight, dy, stride, padding):
    """Gradients of the forward pass; returns (dx, dweight)."""
    _, _, h, w = x.shape
    _, _, kh, kw = weight.shape
    out_h, out_w = dy.shape[2:]
    xp = _pad(x, padding)
    cols = _unfold(xp, kh, kw, stride, out_h, out_w)
    dweight = np.einsum("nopq,ncijpq->ocij", dy, cols, optimize=True)
    dcols = np.einsum("ocij,nopq->ncijpq", weight, dy, optimize=True)
    dxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += dcols[
                :, :, i, j
            ]
    if padding == 0:
        return dxp, dweight
    return dxp[:, :, padding : padding + h, padding : padding + w], dweight
