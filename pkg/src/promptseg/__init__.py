"""Prompted-adaptor segmentation toolkit.

Differentiable image enhancement driven by a learned global embedding,
parameter-efficient adaptors over a frozen transformer backbone, a
synthetic adverse-condition data generator, segmentation metrics with
brute-force oracles, and a finite-difference-verified autodiff core.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, finite_difference_check
from .model import ModelSpec, SegModel, bce_loss

__all__ = ["Tensor", "backward", "finite_difference_check", "ModelSpec", "SegModel",
           "bce_loss", "__version__"]
