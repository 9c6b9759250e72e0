"""Stochastic view generation: crop, flip, color jitter, grayscale, blur.

All functions take a single C x H x W float image in [0, 1] and a
numpy Generator; every random decision draws from that generator in a
fixed order, so a per-sample seeded stream reproduces the view bitwise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

log = logging.getLogger(__name__)

LUMA = (0.299, 0.587, 0.114)


@dataclass
class AugmentParams:
    out_size: int = 32
    crop_scale: tuple[float, float] = (0.2, 1.0)
    crop_aspect: tuple[float, float] = (0.75, 4.0 / 3.0)
    flip_p: float = 0.5
    jitter_brightness: float = 0.8
    jitter_contrast: float = 0.8
    jitter_saturation: float = 0.8
    jitter_hue: float = 0.2
    jitter_p: float = 0.8
    grayscale_p: float = 0.2
    blur_p: float = 0.5
    blur_sigma: tuple[float, float] = (0.1, 2.0)
    blur_kernel_frac: float = 0.1

    def __post_init__(self):
        for name in ("flip_p", "jitter_p", "grayscale_p", "blur_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        for name in ("crop_scale", "crop_aspect", "blur_sigma"):
            lo, hi = getattr(self, name)
            if not (lo <= hi and lo > 0):
                raise ValueError(f"{name} range invalid: ({lo}, {hi})")


def luminance(img: np.ndarray) -> np.ndarray:
    """C x H x W -> H x W luma (single-channel input passes through)."""
    if img.shape[0] == 1:
        return img[0]
    r, g, b = img[0], img[1], img[2]
    return LUMA[0] * r + LUMA[1] * g + LUMA[2] * b


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-aligned bilinear resize of a C x H x W image."""
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    tl = img[:, y0[:, None], x0[None, :]]
    tr = img[:, y0[:, None], x1[None, :]]
    bl = img[:, y1[:, None], x0[None, :]]
    br = img[:, y1[:, None], x1[None, :]]
    top = tl + (tr - tl) * fx
    bot = bl + (br - bl) * fx
    return top + (bot - top) * fy


def random_resized_crop(img: np.ndarray, params: AugmentParams, rng: np.random.Generator) -> np.ndarray:
    """Area-scaled random crop, resized to out_size; center-crop fallback."""
    _, h, w = img.shape
    area = h * w
    lo, hi = params.crop_scale
    alo, ahi = params.crop_aspect
    for _ in range(10):
        target = area * rng.uniform(lo, hi)
        aspect = np.exp(rng.uniform(np.log(alo), np.log(ahi)))
        cw = int(round(np.sqrt(target * aspect)))
        ch = int(round(np.sqrt(target / aspect)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            crop = img[:, top : top + ch, left : left + cw]
            return resize_bilinear(crop, params.out_size, params.out_size)
    log.debug("crop rejection exhausted, falling back to center crop")
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    crop = img[:, top : top + side, left : left + side]
    return resize_bilinear(crop, params.out_size, params.out_size)


def rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    r, g, b = img[0], img[1], img[2]
    maxc = np.max(img, axis=0)
    minc = np.min(img, axis=0)
    v = maxc
    spread = maxc - minc
    s = np.where(maxc > 0, spread / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe = np.where(spread > 0, spread, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(spread > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v])


def hsv_to_rgb(img: np.ndarray) -> np.ndarray:
    h, s, v = img[0], img[1], img[2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def adjust_hue(img: np.ndarray, offset: float) -> np.ndarray:
    """Shift hue by `offset` turns of the unit hue circle."""
    if img.shape[0] == 1:
        return img.copy()
    hsv = rgb_to_hsv(img)
    hsv[0] = (hsv[0] + offset) % 1.0
    return hsv_to_rgb(hsv)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    lum = luminance(img)
    return np.repeat(lum[None], img.shape[0], axis=0)


def color_jitter(
    img: np.ndarray,
    brightness: float,
    contrast: float,
    saturation: float,
    hue: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Multiplicative jitter with a randomized application order.

    Factors are drawn uniformly from [max(0, 1 - v), 1 + v] per channel
    property; hue offset uniformly from [-hue, hue] turns.
    """
    fb = rng.uniform(max(0.0, 1.0 - brightness), 1.0 + brightness)
    fc = rng.uniform(max(0.0, 1.0 - contrast), 1.0 + contrast)
    fs = rng.uniform(max(0.0, 1.0 - saturation), 1.0 + saturation)
    fh = rng.uniform(-hue, hue)
    order = rng.permutation(4)
    out = img
    for op in order:
        if op == 0:
            out = out * fb
        elif op == 1:
            mean = luminance(out).mean()
            out = out * fc + (1.0 - fc) * mean
        elif op == 2:
            gray = luminance(out)[None]
            out = out * fs + (1.0 - fs) * gray
        else:
            out = adjust_hue(out, fh)
        out = np.clip(out, 0.0, 1.0)
    return out


def blur_kernel_size(h: int, w: int, frac: float) -> int:
    """Kernel extent = frac of the smaller image side, forced odd, >= 3."""
    k = int(round(frac * min(h, w)))
    if k % 2 == 0:
        k += 1
    return max(k, 3)


def gaussian_blur(img: np.ndarray, sigma: float, kernel: int) -> np.ndarray:
    """Separable Gaussian of the given odd kernel extent, replicate padding."""
    r = kernel // 2
    xs = np.arange(-r, r + 1, dtype=np.float64)
    k1 = np.exp(-0.5 * (xs / sigma) ** 2)
    k1 /= k1.sum()
    out = ndimage.correlate1d(img, k1, axis=1, mode="nearest")
    out = ndimage.correlate1d(out, k1, axis=2, mode="nearest")
    return out.astype(img.dtype, copy=False)


def hflip(img: np.ndarray) -> np.ndarray:
    return img[:, :, ::-1].copy()


def augment(img: np.ndarray, params: AugmentParams, rng: np.random.Generator) -> np.ndarray:
    """Full view pipeline: crop, flip, jitter, grayscale, blur (in order)."""
    out = random_resized_crop(img, params, rng)
    if rng.random() < params.flip_p:
        out = hflip(out)
    if rng.random() < params.jitter_p:
        out = color_jitter(
            out,
            params.jitter_brightness,
            params.jitter_contrast,
            params.jitter_saturation,
            params.jitter_hue,
            rng,
        )
    if rng.random() < params.grayscale_p:
        out = to_grayscale(out)
    if rng.random() < params.blur_p:
        sigma = rng.uniform(*params.blur_sigma)
        k = blur_kernel_size(out.shape[1], out.shape[2], params.blur_kernel_frac)
        out = gaussian_blur(out, sigma, k)
    return np.clip(out, 0.0, 1.0)
