"""Non-learnable image representations used as dependence targets.

Five kinds: the flattened original image, a flattened freshly-augmented
image, order-2 scattering coefficients, oriented-gradient histograms
(HOG), and a local-standard-deviation filter. Each maps a batch
(B, C, H, W) to a (B, D_k) matrix. HOG works on luminance; LSD and
scattering run per channel. Everything is a pure function of
(image, params, seed): identical inputs give bitwise-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .augment import AugmentParams, augment, luminance
from .errors import ConfigError
from .scattering import scattering2d
from .tensor import default_dtype

KINDS = ("flatten_original", "flatten_augmented", "scattering", "hog", "lsd")

EPS_HOG = 1e-6  # per-cell L2 normalization stabilizer


@dataclass(frozen=True)
class DescriptorSpec:
    kind: str
    beta: float = 1.0
    scattering_scales: int = 2
    scattering_orientations: int = 8
    hog_bins: int = 24
    hog_pool: int = 8
    lsd_kernel: int = 3
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown descriptor kind {self.kind!r}, expected one of {KINDS}")
        if self.beta < 0:
            raise ConfigError(f"descriptor weight must be >= 0, got {self.beta}")
        if self.scattering_scales < 1 or self.scattering_orientations < 1:
            raise ConfigError("scattering needs scales >= 1 and orientations >= 1")
        if self.hog_bins < 2:
            raise ConfigError(f"hog needs bins >= 2, got {self.hog_bins}")
        if self.hog_pool < 1:
            raise ConfigError(f"hog needs pool >= 1, got {self.hog_pool}")
        if self.lsd_kernel < 3 or self.lsd_kernel % 2 == 0:
            raise ConfigError(f"lsd kernel must be odd and >= 3, got {self.lsd_kernel}")
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    @property
    def deterministic(self) -> bool:
        """True when the output depends only on the image (cacheable)."""
        return self.kind != "flatten_augmented"


@dataclass
class DescriptorOutput:
    values: np.ndarray  # B x D_k
    kind: str
    name: str

    @property
    def d_k(self) -> int:
        return self.values.shape[1]


def flatten_image(batch: np.ndarray) -> np.ndarray:
    """Row-major flatten per sample: (B, C, H, W) -> (B, C*H*W)."""
    b = batch.shape[0]
    return np.ascontiguousarray(batch).reshape(b, -1)


def lsd_filter(batch: np.ndarray, kernel: int) -> np.ndarray:
    """Per-pixel windowed population std, replicate borders, per channel."""
    if kernel < 3 or kernel % 2 == 0:
        raise ConfigError(f"lsd kernel must be odd and >= 3, got {kernel}")
    b, c, h, w = batch.shape
    if kernel > min(h, w) + 2 * (kernel // 2):
        raise ConfigError(f"lsd kernel {kernel} larger than padded image {h}x{w}")
    out = np.empty((b, c, h, w))
    for i in range(b):
        for ch in range(c):
            out[i, ch] = kernels.lsd2d(np.ascontiguousarray(batch[i, ch], dtype=np.float64), kernel)
    return out.reshape(b, -1)


def _central_gradients(img: np.ndarray):
    """d/drow, d/dcol with central differences inside, one-sided at borders."""
    gy, gx = np.gradient(img)
    return gx, gy


def hog(batch: np.ndarray, bins: int, pool: int) -> np.ndarray:
    """Unsigned-orientation HOG on luminance.

    Magnitude-weighted linear interpolation between the two nearest bin
    centers k * (180 / bins); histograms pooled over non-overlapping
    pool x pool cells (extents rounded down) and L2-normalized per cell
    with a small stabilizer.
    """
    if bins < 2:
        raise ConfigError(f"hog needs bins >= 2, got {bins}")
    b, c, h, w = batch.shape
    if h < pool or w < pool:
        raise ConfigError(f"image {h}x{w} smaller than one {pool}x{pool} cell")
    feats = []
    for i in range(b):
        lum = np.asarray(luminance(batch[i]), dtype=np.float64)
        gx, gy = _central_gradients(lum)
        hist = kernels.hog_cells(
            np.ascontiguousarray(gx), np.ascontiguousarray(gy), bins, pool
        )
        norm = np.sqrt((hist * hist).sum(axis=2, keepdims=True) + EPS_HOG**2)
        feats.append((hist / norm).reshape(-1))
    return np.stack(feats)


def scattering(batch: np.ndarray, scales: int, orientations: int) -> np.ndarray:
    """Order-2 scattering per channel, flattened to (B, D_k)."""
    b, c, h, w = batch.shape
    flat = np.ascontiguousarray(batch, dtype=np.float64).reshape(b * c, h, w)
    coeffs = scattering2d(flat, scales, orientations)
    return coeffs.reshape(b, -1)


def apply_bank(
    batch: np.ndarray,
    specs: list[DescriptorSpec],
    rng_factory: Optional[Callable[[int], np.random.Generator]] = None,
    augment_params: Optional[AugmentParams] = None,
) -> list[DescriptorOutput]:
    """Compute each descriptor on the non-augmented batch, in spec order.

    `flatten_augmented` draws its own augmentation per sample through
    `rng_factory(sample_index)`, a dedicated seed stream independent of
    the view-generation stream.
    """
    if not specs:
        raise ConfigError("descriptor bank must not be empty")
    outputs = []
    seen: dict[str, int] = {}
    for spec in specs:
        values = compute_descriptor(batch, spec, rng_factory, augment_params)
        name = spec.name
        if name in seen:
            seen[name] += 1
            name = f"{name}_{seen[spec.name]}"
        else:
            seen[name] = 1
        outputs.append(DescriptorOutput(values=values, kind=spec.kind, name=name))
    return outputs


def compute_descriptor(
    batch: np.ndarray,
    spec: DescriptorSpec,
    rng_factory: Optional[Callable[[int], np.random.Generator]] = None,
    augment_params: Optional[AugmentParams] = None,
) -> np.ndarray:
    if spec.kind == "flatten_original":
        values = flatten_image(np.asarray(batch, dtype=np.float64))
    elif spec.kind == "flatten_augmented":
        if rng_factory is None or augment_params is None:
            raise ConfigError("flatten_augmented needs an rng factory and augment params")
        views = np.stack(
            [
                augment(np.asarray(batch[i], dtype=np.float64), augment_params, rng_factory(i))
                for i in range(batch.shape[0])
            ]
        )
        values = flatten_image(views)
    elif spec.kind == "scattering":
        values = scattering(batch, spec.scattering_scales, spec.scattering_orientations)
    elif spec.kind == "hog":
        values = hog(batch, spec.hog_bins, spec.hog_pool)
    elif spec.kind == "lsd":
        values = lsd_filter(batch, spec.lsd_kernel)
    else:  # unreachable, validated at construction
        raise ConfigError(f"unknown descriptor kind {spec.kind!r}")
    return values.astype(default_dtype(), copy=False)


def default_bank() -> list[DescriptorSpec]:
    """The five-descriptor default bank."""
    return [
        DescriptorSpec(kind="flatten_original"),
        DescriptorSpec(kind="scattering"),
        DescriptorSpec(kind="flatten_augmented"),
        DescriptorSpec(kind="hog"),
        DescriptorSpec(kind="lsd"),
    ]
