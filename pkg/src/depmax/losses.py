"""The three-part training objective.

An invariance part (embedding MSE plus a per-dimension standard
deviation hinge on both views), a view-dependence part (one minus the
distance correlation between the two views' embeddings), and a
regularization part (one minus the distance correlation between the
augmented view's embeddings and each non-learnable descriptor).
Descriptors enter as constants; gradients flow into both embedding
batches and nowhere else.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .dcor import dcor_loss
from .descriptors import DescriptorOutput
from .errors import ShapeError
from .tensor import Tensor


@dataclass
class LossWeights:
    mse_weight: float = 1.0  # weight of the embedding MSE term
    var_weight: float = 1.0  # weight of the std hinge terms
    view_weight: float = 1.0  # weight of the view-dependence term
    margin: float = 1.0  # std hinge margin
    std_eps: float = 1e-4  # stabilizer inside the std sqrt

    def __post_init__(self):
        for name in ("mse_weight", "var_weight", "view_weight", "margin", "std_eps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class LossBreakdown:
    """Raw component values plus the weighted total."""

    total: float
    mse: float
    var_z: float
    var_zt: float
    dcor_zz: float
    dcor_desc: dict[str, float] = field(default_factory=dict)

    def to_metrics(self) -> dict:
        return {
            "loss_total": self.total,
            "loss_mse": self.mse,
            "loss_var_z": self.var_z,
            "loss_var_zt": self.var_zt,
            "loss_dcor_zz": self.dcor_zz,
            "loss_dcor_desc": dict(self.dcor_desc),
        }


def mse_term(z: Tensor, zt: Tensor) -> Tensor:
    """Mean over the batch of squared embedding distances."""
    if z.data.shape != zt.data.shape:
        raise ShapeError(f"embedding shapes differ: {z.data.shape} vs {zt.data.shape}")
    b = z.data.shape[0]
    return T.mul(T.sum_(T.square(T.sub(z, zt))), 1.0 / b)


def variance_term(z: Tensor, margin: float = 1.0, eps: float = 1e-4) -> Tensor:
    """Mean over dimensions of max(0, margin - std), population variance."""
    if z.data.shape[0] < 2:
        raise ShapeError(f"variance term needs batch >= 2, got {z.data.shape[0]}")
    m = T.mean_(z, axis=0, keepdims=True)
    var = T.mean_(T.square(T.sub(z, m)), axis=0)
    std = T.sqrt_stable(var, eps)
    return T.mean_(T.relu(T.sub(float(margin), std)))


def loss1(z: Tensor, zt: Tensor, weights: LossWeights) -> Tensor:
    """Invariance + anti-collapse: the hinge constrains both views."""
    out = T.mul(mse_term(z, zt), weights.mse_weight)
    if weights.var_weight != 0.0:
        hinge = T.add(
            variance_term(z, weights.margin, weights.std_eps),
            variance_term(zt, weights.margin, weights.std_eps),
        )
        out = T.add(out, T.mul(hinge, weights.var_weight))
    return out


def loss2(z: Tensor, zt: Tensor, view_weight: float = 1.0) -> Tensor:
    return T.mul(T.sub(1.0, dcor_loss(zt, z)), view_weight)


def loss3(zt: Tensor, descriptors: list[DescriptorOutput], betas: list[float]) -> Tensor:
    """Sum of weighted (1 - dcor) against each descriptor, as constants."""
    out = Tensor(np.zeros((), dtype=zt.data.dtype))
    for desc, beta in zip(descriptors, betas):
        if desc.values.shape[0] != zt.data.shape[0]:
            raise ShapeError(
                f"descriptor {desc.name!r} batch {desc.values.shape[0]} != embeddings {zt.data.shape[0]}"
            )
        const = Tensor(np.asarray(desc.values, dtype=zt.data.dtype))
        out = T.add(out, T.mul(T.sub(1.0, dcor_loss(zt, const)), beta))
    return out


def total_loss(
    z: Tensor,
    zt: Tensor,
    descriptors: list[DescriptorOutput],
    weights: LossWeights,
    betas: list[float] | None = None,
) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum of all terms; returns the scalar node and its breakdown."""
    if betas is None:
        betas = [1.0] * len(descriptors)
    if len(betas) != len(descriptors):
        raise ShapeError(f"got {len(betas)} weights for {len(descriptors)} descriptors")

    mse = mse_term(z, zt)
    var_z = variance_term(z, weights.margin, weights.std_eps)
    var_zt = variance_term(zt, weights.margin, weights.std_eps)
    dcor_zz = dcor_loss(zt, z)

    total = T.add(
        T.mul(mse, weights.mse_weight),
        T.mul(T.add(var_z, var_zt), weights.var_weight),
    )
    total = T.add(total, T.mul(T.sub(1.0, dcor_zz), weights.view_weight))
    desc_dcors: dict[str, float] = {}
    for desc, beta in zip(descriptors, betas):
        if desc.values.shape[0] != zt.data.shape[0]:
            raise ShapeError(
                f"descriptor {desc.name!r} batch {desc.values.shape[0]} != embeddings {zt.data.shape[0]}"
            )
        const = Tensor(np.asarray(desc.values, dtype=zt.data.dtype))
        dc = dcor_loss(zt, const)
        total = T.add(total, T.mul(T.sub(1.0, dc), beta))
        desc_dcors[desc.name] = dc.item()

    # The reported total is re-summed from the component floats in double
    # precision so the breakdown identity holds at 1e-9 even in fp32 runs;
    # the graph node `total` is what backward consumes.
    reported = (
        weights.mse_weight * mse.item()
        + weights.var_weight * (var_z.item() + var_zt.item())
        + weights.view_weight * (1.0 - dcor_zz.item())
        + sum(b * (1.0 - d) for b, d in zip(betas, desc_dcors.values()))
    )
    breakdown = LossBreakdown(
        total=reported,
        mse=mse.item(),
        var_z=var_z.item(),
        var_zt=var_zt.item(),
        dcor_zz=dcor_zz.item(),
        dcor_desc=desc_dcors,
    )
    return total, breakdown
