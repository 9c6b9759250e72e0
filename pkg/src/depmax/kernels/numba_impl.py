"""JIT-compiled kernel implementations (default backend).

Plain loops, single-threaded so reductions have a fixed deterministic
order. Padding is materialized up front to keep the hot loops free of
bounds checks. Each function mirrors its twin in `numpy_impl`.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _pad2d(x, pad):
    b, c, h, w = x.shape
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    xp[:, :, pad : pad + h, pad : pad + w] = x
    return xp


@njit(cache=True)
def conv2d_forward(x, w, stride, pad):
    b, c, h, wd = x.shape
    f, _, k, _ = w.shape
    xp = _pad2d(x, pad) if pad > 0 else x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((b, f, ho, wo), dtype=x.dtype)
    for bi in range(b):
        for fi in range(f):
            for ci in range(c):
                for ki in range(k):
                    for kj in range(k):
                        wv = w[fi, ci, ki, kj]
                        for oi in range(ho):
                            ii = oi * stride + ki
                            for oj in range(wo):
                                out[bi, fi, oi, oj] += wv * xp[bi, ci, ii, oj * stride + kj]
    return out


@njit(cache=True)
def conv2d_backward_x(grad_out, w, stride, pad, h, wd):
    b, f, ho, wo = grad_out.shape
    _, c, k, _ = w.shape
    dxp = np.zeros((b, c, h + 2 * pad, wd + 2 * pad), dtype=grad_out.dtype)
    for bi in range(b):
        for fi in range(f):
            for ci in range(c):
                for ki in range(k):
                    for kj in range(k):
                        wv = w[fi, ci, ki, kj]
                        for oi in range(ho):
                            ii = oi * stride + ki
                            for oj in range(wo):
                                dxp[bi, ci, ii, oj * stride + kj] += wv * grad_out[bi, fi, oi, oj]
    if pad > 0:
        return np.ascontiguousarray(dxp[:, :, pad : pad + h, pad : pad + wd])
    return dxp


@njit(cache=True)
def conv2d_backward_w(grad_out, x, stride, pad, k):
    b, f, ho, wo = grad_out.shape
    _, c, h, wd = x.shape
    xp = _pad2d(x, pad) if pad > 0 else x
    dw = np.zeros((f, c, k, k), dtype=grad_out.dtype)
    for bi in range(b):
        for fi in range(f):
            for ci in range(c):
                for ki in range(k):
                    for kj in range(k):
                        acc = grad_out.dtype.type(0.0)
                        for oi in range(ho):
                            ii = oi * stride + ki
                            for oj in range(wo):
                                acc += grad_out[bi, fi, oi, oj] * xp[bi, ci, ii, oj * stride + kj]
                        dw[fi, ci, ki, kj] += acc
    return dw


@njit(cache=True)
def lsd2d(img, kernel):
    h, w = img.shape
    r = kernel // 2
    n = kernel * kernel
    out = np.empty((h, w), dtype=img.dtype)
    for i in range(h):
        for j in range(w):
            s = img.dtype.type(0.0)
            s2 = img.dtype.type(0.0)
            for di in range(-r, r + 1):
                ii = i + di
                if ii < 0:
                    ii = 0
                elif ii >= h:
                    ii = h - 1
                for dj in range(-r, r + 1):
                    jj = j + dj
                    if jj < 0:
                        jj = 0
                    elif jj >= w:
                        jj = w - 1
                    v = img[ii, jj]
                    s += v
                    s2 += v * v
            m = s / n
            var = s2 / n - m * m
            if var < 0.0:
                var = 0.0
            out[i, j] = np.sqrt(var)
    return out


@njit(cache=True)
def hog_cells(gx, gy, bins, pool):
    h, w = gx.shape
    nch = h // pool
    ncw = w // pool
    hist = np.zeros((nch, ncw, bins), dtype=gx.dtype)
    binw = 180.0 / bins
    for i in range(nch * pool):
        ci = i // pool
        for j in range(ncw * pool):
            cj = j // pool
            vx = gx[i, j]
            vy = gy[i, j]
            mag = np.sqrt(vx * vx + vy * vy)
            if mag == 0.0:
                continue
            ang = np.degrees(np.arctan2(vy, vx)) % 180.0
            t = ang / binw
            k0 = int(np.floor(t))
            frac = t - k0
            k0 = k0 % bins
            k1 = (k0 + 1) % bins
            hist[ci, cj, k0] += mag * (1.0 - frac)
            hist[ci, cj, k1] += mag * frac
    return hist
