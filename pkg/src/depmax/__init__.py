"""Self-supervised representation learning by dependence maximization.

A learnable encoder/projector is trained so its embeddings of augmented
views stay close to and maximally distance-correlated with embeddings
of the original views, while also being distance-correlated with a bank
of non-learnable image descriptors (or a frozen teacher's latents for
model-agnostic distillation). A per-dimension standard-deviation hinge
keeps the embedding from collapsing.
"""

from .dcor import DcorResult, dcor_loss, dcor_stat, dcov2
from .descriptors import DescriptorSpec, apply_bank
from .losses import LossBreakdown, LossWeights, total_loss
from .model import Model, load_checkpoint, save_checkpoint
from .tensor import Tensor, grad_check, set_default_dtype, using_dtype

__version__ = "0.1.0"

__all__ = [
    "DcorResult",
    "DescriptorSpec",
    "LossBreakdown",
    "LossWeights",
    "Model",
    "Tensor",
    "apply_bank",
    "dcor_loss",
    "dcor_stat",
    "dcov2",
    "grad_check",
    "load_checkpoint",
    "save_checkpoint",
    "set_default_dtype",
    "total_loss",
    "using_dtype",
    "__version__",
]
