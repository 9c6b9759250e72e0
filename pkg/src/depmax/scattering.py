"""Order-2 wavelet scattering on a periodic Morlet filter bank.

Filters are built directly in the frequency domain on the DFT grid
(with 2-pi alias folding), so every convolution is exactly circular:
a circular input shift of 2^J pixels shifts the subsampled output by
exactly one pixel, and the band-pass filters annihilate constants
exactly because the zero-frequency sample is forced to 0.

Per input channel the output stacks, in order:

    order 0:  low-pass                                   1 channel
    order 1:  |x * psi(j1, t1)| low-passed               J * L channels
    order 2:  ||x * psi(j1, t1)| * psi(j2, t2)|, j2 > j1
              low-passed                                 L^2 * J(J-1)/2

all subsampled by 2^J after the final low-pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

CENTER_FREQ = 3.0 * np.pi / 4.0  # mother-wavelet center frequency
BANDWIDTH = 0.8  # mother-wavelet envelope scale


@dataclass
class FilterBank:
    h: int
    w: int
    scales: int  # J
    orientations: int  # L
    psi: np.ndarray  # (J*L, H, W) frequency-domain band-pass filters
    psi_meta: list  # (j, l) per filter
    phi: np.ndarray  # (H, W) frequency-domain low-pass

    @property
    def channels_per_input(self) -> int:
        j, l = self.scales, self.orientations
        return 1 + j * l + l * l * (j * (j - 1)) // 2


_BANK_CACHE: dict[tuple, FilterBank] = {}


def _freq_grid(h: int, w: int):
    wy = 2.0 * np.pi * np.fft.fftfreq(h)[:, None]
    wx = 2.0 * np.pi * np.fft.fftfreq(w)[None, :]
    return wy, wx


def _aliased_gaussian(wy, wx, sigma, slant, theta, xi):
    """Sum of Gaussian lobes over 2-pi aliases, centered at xi along theta."""
    out = np.zeros(np.broadcast_shapes(wy.shape, wx.shape))
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    for ky in (-1, 0, 1):
        for kx in (-1, 0, 1):
            oy = wy + 2.0 * np.pi * ky
            ox = wx + 2.0 * np.pi * kx
            u1 = cos_t * ox + sin_t * oy - xi
            u2 = -sin_t * ox + cos_t * oy
            out += np.exp(-0.5 * sigma**2 * (u1 * u1 + (u2 / slant) ** 2))
    return out


def build_bank(h: int, w: int, scales: int, orientations: int) -> FilterBank:
    """Morlet band-pass bank + Gaussian low-pass, cached per geometry."""
    if scales < 1 or orientations < 1:
        raise ConfigError(f"need scales >= 1 and orientations >= 1, got {scales}, {orientations}")
    key = (h, w, scales, orientations)
    if key in _BANK_CACHE:
        return _BANK_CACHE[key]
    wy, wx = _freq_grid(h, w)
    slant = 4.0 / orientations
    psi = []
    meta = []
    for j in range(scales):
        sigma = BANDWIDTH * 2.0**j
        xi = CENTER_FREQ / 2.0**j
        for l in range(orientations):
            theta = np.pi * l / orientations
            band = _aliased_gaussian(wy, wx, sigma, slant, theta, xi)
            low = _aliased_gaussian(wy, wx, sigma, slant, theta, 0.0)
            filt = band - (band[0, 0] / low[0, 0]) * low  # exact zero mean
            psi.append(filt)
            meta.append((j, l))
    sigma_j = BANDWIDTH * 2.0**scales
    phi = _aliased_gaussian(wy, wx, sigma_j, 1.0, 0.0, 0.0)
    phi /= phi[0, 0]  # unit DC gain
    bank = FilterBank(
        h=h,
        w=w,
        scales=scales,
        orientations=orientations,
        psi=np.stack(psi),
        psi_meta=meta,
        phi=phi,
    )
    _BANK_CACHE[key] = bank
    return bank


def scattering2d(images: np.ndarray, scales: int, orientations: int) -> np.ndarray:
    """Scattering coefficients of a (N, H, W) stack.

    Returns (N, channels_per_input, H / 2^J, W / 2^J) float64.
    """
    n, h, w = images.shape
    step = 2**scales
    if h % step or w % step:
        raise ConfigError(f"image extents {h}x{w} not divisible by 2^{scales}")
    bank = build_bank(h, w, scales, orientations)
    phi = bank.phi
    out = np.empty((n, bank.channels_per_input, h // step, w // step))

    def smooth(spec):
        return np.fft.ifft2(spec * phi).real[..., ::step, ::step]

    xf = np.fft.fft2(images)
    out[:, 0] = smooth(xf)
    ch = 1
    second = []  # (slot, j1-filter-index) pairs resolved after first order
    u1f = {}
    for p1, (j1, _) in enumerate(bank.psi_meta):
        u1 = np.abs(np.fft.ifft2(xf * bank.psi[p1]))
        f1 = np.fft.fft2(u1)
        u1f[p1] = f1
        out[:, ch] = smooth(f1)
        ch += 1
    for p1, (j1, _) in enumerate(bank.psi_meta):
        for p2, (j2, _) in enumerate(bank.psi_meta):
            if j2 <= j1:
                continue
            u2 = np.abs(np.fft.ifft2(u1f[p1] * bank.psi[p2]))
            out[:, ch] = smooth(np.fft.fft2(u2))
            ch += 1
    assert ch == bank.channels_per_input
    return out
