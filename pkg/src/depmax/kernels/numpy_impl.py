"""Pure-numpy kernel implementations (fallback backend).

Semantics must match `numba_impl` exactly up to floating-point
summation order; the benchmark and the backend-agreement tests compare
the two.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage


def conv2d_forward(x, w, stride, pad):
    """Cross-correlate x (B,C,H,W) with w (F,C,k,k); zero padding."""
    b, c, h, wd = x.shape
    f, _, k, _ = w.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * k * k)
    out = cols @ w.reshape(f, -1).T
    return np.ascontiguousarray(out.reshape(b, ho, wo, f).transpose(0, 3, 1, 2))


def conv2d_backward_x(grad_out, w, stride, pad, h, wd):
    """Gradient of conv2d_forward w.r.t. x; h, wd are the input extents."""
    b, f, ho, wo = grad_out.shape
    _, c, k, _ = w.shape
    gcols = grad_out.transpose(0, 2, 3, 1).reshape(b * ho * wo, f)
    dwin = (gcols @ w.reshape(f, -1)).reshape(b, ho, wo, c, k, k)
    dwin = dwin.transpose(0, 3, 1, 2, 4, 5)  # (B, C, Ho, Wo, k, k)
    dxp = np.zeros((b, c, h + 2 * pad, wd + 2 * pad), dtype=grad_out.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dwin[
                :, :, :, :, i, j
            ]
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(dxp)


def conv2d_backward_w(grad_out, x, stride, pad, k):
    """Gradient of conv2d_forward w.r.t. w."""
    b, f, ho, wo = grad_out.shape
    _, c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * k * k)
    gcols = grad_out.transpose(0, 2, 3, 1).reshape(b * ho * wo, f)
    return np.ascontiguousarray((gcols.T @ cols).reshape(f, c, k, k))


def lsd2d(img, kernel):
    """Windowed population standard deviation, replicate borders."""
    m = ndimage.uniform_filter(img, size=kernel, mode="nearest")
    m2 = ndimage.uniform_filter(img * img, size=kernel, mode="nearest")
    var = m2 - m * m
    np.clip(var, 0.0, None, out=var)
    return np.sqrt(var)


def hog_cells(gx, gy, bins, pool):
    """Magnitude-weighted orientation histograms over pool x pool cells.

    Unsigned orientations in [0, 180) are linearly interpolated between
    the two nearest bin centers k * (180 / bins). Returns raw
    (unnormalized) histograms of shape (H//pool, W//pool, bins).
    """
    h, w = gx.shape
    nch, ncw = h // pool, w // pool
    hc, wc = nch * pool, ncw * pool
    gx = gx[:hc, :wc]
    gy = gy[:hc, :wc]
    mag = np.sqrt(gx * gx + gy * gy)
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    t = ang / (180.0 / bins)
    k0 = np.floor(t).astype(np.int64)
    frac = t - k0
    k0 %= bins
    k1 = (k0 + 1) % bins
    cell = (np.arange(hc)[:, None] // pool) * ncw + (np.arange(wc)[None, :] // pool)
    hist = np.zeros(nch * ncw * bins, dtype=gx.dtype)
    np.add.at(hist, cell.ravel() * bins + k0.ravel(), (mag * (1.0 - frac)).ravel())
    np.add.at(hist, cell.ravel() * bins + k1.ravel(), (mag * frac).ravel())
    return hist.reshape(nch, ncw, bins)
