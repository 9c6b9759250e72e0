"""Dataset ingestion, teacher-embedding files, batching.

Supported sources: the STL10 binary layout (channel-major images,
column-major within a channel, 8-bit), and a procedural dataset of
oriented-grating textures whose classes are genuinely discriminative
for gradient- and scattering-based descriptors. Numeric matrices
(teacher embeddings, descriptor dumps) use a small versioned binary
format ("MVTE").
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .augment import resize_bilinear
from .errors import DataError, FormatError, IntegrityError
from .seeds import SYNTHETIC, epoch_permutation, stream

STL10_IMAGE_BYTES = 3 * 96 * 96
MATRIX_MAGIC = b"MVTE"
MATRIX_VERSION = 1


@dataclass
class Dataset:
    """In-memory image set: float32 pixels in [0,1], optional labels."""

    images: np.ndarray  # N x C x H x W
    labels: np.ndarray | None = None  # N, int64 zero-based

    def __len__(self) -> int:
        return self.images.shape[0]


# -- STL10 binary layout ---------------------------------------------------


def read_stl10(images_path, labels_path=None, limit=None, image_size=None) -> Dataset:
    """Read STL10 binary images (and labels), rescaled to [0, 1].

    File bytes are laid out image by image, channel-major, and within a
    channel column-major; labels are one byte per image in 1..10 and
    are returned zero-based.
    """
    raw = np.fromfile(images_path, dtype=np.uint8)
    if raw.size % STL10_IMAGE_BYTES:
        raise FormatError(
            f"{images_path}: length {raw.size} not divisible by {STL10_IMAGE_BYTES} "
            f"(first partial image at byte offset {raw.size - raw.size % STL10_IMAGE_BYTES})"
        )
    n = raw.size // STL10_IMAGE_BYTES
    if limit is not None and limit > 0:
        n = min(n, int(limit))
        raw = raw[: n * STL10_IMAGE_BYTES]
    imgs = raw.reshape(n, 3, 96, 96)  # [n, channel, column, row]
    imgs = imgs.transpose(0, 1, 3, 2)  # column-major -> row-major
    images = (imgs.astype(np.float32) / 255.0).copy()
    if image_size is not None and image_size != 96:
        images = np.stack(
            [resize_bilinear(im, image_size, image_size) for im in images]
        ).astype(np.float32)
    labels = None
    if labels_path is not None:
        lab = np.fromfile(labels_path, dtype=np.uint8)
        if lab.size < n:
            raise IntegrityError(
                f"{labels_path}: {lab.size} labels for {n} images (missing from byte offset {lab.size})"
            )
        lab = lab[:n]
        bad = np.nonzero((lab < 1) | (lab > 10))[0]
        if bad.size:
            raise DataError(
                f"{labels_path}: label {int(lab[bad[0]])} out of range 1..10 at byte offset {int(bad[0])}"
            )
        labels = lab.astype(np.int64) - 1
    return Dataset(images=images, labels=labels)


# -- synthetic oriented gratings ---------------------------------------------


@dataclass
class SyntheticSpec:
    classes: int = 4
    image_size: int = 32
    train_per_class: int = 500
    test_per_class: int = 125
    frequency: float = 4.0  # cycles across the image
    phase_jitter: float = 0.5  # radians, uniform around 0
    noise: float = 0.08  # additive Gaussian sigma
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise DataError(f"need at least 2 classes, got {self.classes}")


def _render_gratings(spec: SyntheticSpec, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    s = spec.image_size
    coords = (np.arange(s) + 0.5) / s
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    n = labels.size
    out = np.empty((n, 3, s, s), dtype=np.float32)
    # class orientations are evenly spaced over [0, 180) degrees
    thetas = np.pi * labels / spec.classes
    phases = rng.uniform(-spec.phase_jitter, spec.phase_jitter, size=n)
    gains = rng.uniform(0.85, 1.0, size=(n, 3))
    noise = rng.normal(0.0, spec.noise, size=(n, 3, s, s))
    for i in range(n):
        u = np.cos(thetas[i]) * xx + np.sin(thetas[i]) * yy
        base = 0.5 + 0.45 * np.sin(2.0 * np.pi * spec.frequency * u + phases[i])
        img = base[None] * gains[i][:, None, None] + noise[i]
        out[i] = np.clip(img, 0.0, 1.0)
    return out


def make_synthetic(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    """Deterministic class-balanced train/test oriented-grating sets."""
    train_labels = np.repeat(np.arange(spec.classes), spec.train_per_class).astype(np.int64)
    test_labels = np.repeat(np.arange(spec.classes), spec.test_per_class).astype(np.int64)
    train = _render_gratings(spec, train_labels, stream(spec.seed, SYNTHETIC, 0))
    test = _render_gratings(spec, test_labels, stream(spec.seed, SYNTHETIC, 1))
    return (
        Dataset(images=train, labels=train_labels),
        Dataset(images=test, labels=test_labels),
    )


# -- numeric matrix files ------------------------------------------------------


def write_matrix(path, values: np.ndarray) -> None:
    values = np.asarray(values)
    if values.ndim != 2:
        raise DataError(f"matrix file stores 2-d arrays, got shape {values.shape}")
    with open(path, "wb") as f:
        f.write(MATRIX_MAGIC)
        f.write(struct.pack("<III", MATRIX_VERSION, values.shape[0], values.shape[1]))
        f.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MATRIX_MAGIC:
            raise FormatError(f"{path}: bad matrix magic {magic!r} at offset 0")
        header = f.read(12)
        if len(header) != 12:
            raise IntegrityError(f"{path}: truncated header at offset {4 + len(header)}")
        version, rows, cols = struct.unpack("<III", header)
        if version != MATRIX_VERSION:
            raise FormatError(f"{path}: unsupported matrix version {version}")
        payload = f.read(rows * cols * 4)
        if len(payload) != rows * cols * 4:
            raise IntegrityError(
                f"{path}: payload truncated at offset {16 + len(payload)} "
                f"(expected {rows * cols * 4} bytes)"
            )
        if f.read(1):
            raise IntegrityError(f"{path}: unexpected trailing bytes at offset {16 + len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).copy()


# -- batching --------------------------------------------------------------------


def batch_indices(n: int, batch_size: int, seed: int, epoch: int, drop_last: bool = True):
    """Index batches for one epoch under the reference seeded shuffle."""
    order = epoch_permutation(seed, epoch, n)
    stop = (n // batch_size) * batch_size if drop_last else n
    for start in range(0, stop, batch_size):
        yield order[start : start + batch_size]


def make_batches(dataset: Dataset, batch_size: int, seed: int, epoch: int = 0, drop_last: bool = True):
    """Yield (images, labels, indices) batches in seeded shuffled order."""
    for idx in batch_indices(len(dataset), batch_size, seed, epoch, drop_last):
        labels = dataset.labels[idx] if dataset.labels is not None else None
        yield dataset.images[idx], labels, idx
