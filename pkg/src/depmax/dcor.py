"""Batched distance covariance / variance / correlation.

Two routes are provided on purpose. `dcor_stat` is the honest numpy
statistic (reports a degenerate flag, no smoothing), used for
evaluation and as an oracle. `dcor_loss` is the differentiable node
built from tensor primitives with a smoothed denominator, used inside
training objectives. Both accept matrices with different column
counts, which is what lets embeddings be compared against arbitrary
descriptors and teacher latents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import EPS_SQRT, Tensor

EPS_DEGENERATE = 1e-12  # smoothed-denominator / degeneracy threshold


@dataclass
class CenteredDistanceMatrix:
    """Double-centered pairwise-distance matrix with its source shape."""

    values: np.ndarray
    source_shape: tuple[int, int]


@dataclass
class DcorResult:
    dcor: float
    dcov2: float
    dvar_x: float
    dvar_y: float
    degenerate: bool

    def to_dict(self) -> dict:
        return {
            "dcor": self.dcor,
            "dcov2": self.dcov2,
            "dvar_x": self.dvar_x,
            "dvar_y": self.dvar_y,
            "degenerate": self.degenerate,
        }


# -- numpy statistic route ---------------------------------------------------


def _check_batch(x: np.ndarray, name: str) -> None:
    if x.ndim != 2:
        raise ShapeError(f"{name} must be a B x D matrix, got shape {x.shape}")
    if x.shape[0] < 2:
        raise ShapeError(f"batch too small: need B >= 2, got B={x.shape[0]}")


def pairwise_distances_np(x: np.ndarray) -> np.ndarray:
    """Exact B x B Euclidean distances (diagonal exactly 0).

    This is the statistic route; the differentiable route applies a
    sqrt stabilizer instead and therefore perturbs the diagonal.
    """
    _check_batch(x, "X")
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] - 2.0 * (x @ x.T) + sq[None, :]
    np.clip(d2, 0.0, None, out=d2)
    d2 = 0.5 * (d2 + d2.T)  # exact symmetry despite rounding
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def double_center_np(m: np.ndarray) -> np.ndarray:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"double centering needs a square matrix, got {m.shape}")
    row = m.mean(axis=1, keepdims=True)
    col = m.mean(axis=0, keepdims=True)
    return m - row - col + m.mean()


def double_center(m: np.ndarray, source_shape=None) -> CenteredDistanceMatrix:
    values = double_center_np(m)
    if source_shape is None:
        source_shape = (m.shape[0], 0)
    return CenteredDistanceMatrix(values=values, source_shape=tuple(source_shape))


def _centered(x: np.ndarray) -> np.ndarray:
    return double_center_np(pairwise_distances_np(x))


def dcov2(x: np.ndarray, y: np.ndarray) -> float:
    """Squared distance covariance (plain V-statistic)."""
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"batch sizes differ: {x.shape[0]} vs {y.shape[0]}")
    a = _centered(np.asarray(x, dtype=np.float64))
    c = _centered(np.asarray(y, dtype=np.float64))
    b = x.shape[0]
    return float((a * c).sum() / (b * b))


def dcor_stat(x: np.ndarray, y: np.ndarray) -> DcorResult:
    """Distance correlation with variance terms; degeneracy is a flag.

    Computation order is identical in both arguments, so
    dcor_stat(x, y).dcor == dcor_stat(y, x).dcor exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"batch sizes differ: {x.shape[0]} vs {y.shape[0]}")
    a = _centered(x)
    c = _centered(y)
    b = x.shape[0]
    scale = 1.0 / (b * b)
    cov2 = (a * c).sum() * scale
    var_x = (a * a).sum() * scale
    var_y = (c * c).sum() * scale
    degenerate = var_x <= EPS_DEGENERATE or var_y <= EPS_DEGENERATE
    if degenerate:
        dcor = 0.0
    else:
        dcor = cov2 / np.sqrt(var_x * var_y)
    return DcorResult(
        dcor=float(dcor),
        dcov2=float(cov2),
        dvar_x=float(var_x),
        dvar_y=float(var_y),
        degenerate=bool(degenerate),
    )


# -- differentiable route ----------------------------------------------------


def pairwise_distances(x: Tensor) -> Tensor:
    """Differentiable B x B distance matrix from a B x D tensor."""
    _check_batch(x.data, "X")
    sq = T.sum_(T.square(x), axis=1, keepdims=True)  # B x 1
    g = T.matmul(x, T.transpose(x))  # B x B
    d2 = T.add(T.sub(sq, T.mul(g, 2.0)), T.transpose(sq))
    d2 = T.relu(d2)  # clip the tiny negatives rounding produces
    return T.sqrt_stable(d2, EPS_SQRT)


def double_center_t(m: Tensor) -> Tensor:
    if m.data.ndim != 2 or m.data.shape[0] != m.data.shape[1]:
        raise ShapeError(f"double centering needs a square matrix, got {m.data.shape}")
    row = T.mean_(m, axis=1, keepdims=True)
    col = T.mean_(m, axis=0, keepdims=True)
    return T.add(T.sub(T.sub(m, row), col), T.mean_(m))


def dcor_loss(x: Tensor, y: Tensor) -> Tensor:
    """Differentiable distance correlation with a smoothed denominator.

    Matches dcor_stat within 1e-6 on non-degenerate inputs; on a
    degenerate argument (zero distance variance) it evaluates to ~0
    with a finite gradient instead of raising.
    """
    if x.data.shape[0] != y.data.shape[0]:
        raise ShapeError(f"batch sizes differ: {x.data.shape[0]} vs {y.data.shape[0]}")
    a = double_center_t(pairwise_distances(x))
    c = double_center_t(pairwise_distances(y))
    b = x.data.shape[0]
    scale = 1.0 / (b * b)
    cov2 = T.mul(T.sum_(T.mul(a, c)), scale)
    var_x = T.mul(T.sum_(T.square(a)), scale)
    var_y = T.mul(T.sum_(T.square(c)), scale)
    return T.div(cov2, T.sqrt_stable(T.mul(var_x, var_y), EPS_DEGENERATE))
