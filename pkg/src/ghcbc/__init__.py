"""Desk-scale constrained behavior cloning: tensors with autodiff, a planar-arm
sorting simulator, an action-chunking transformer policy with geometric and
history constraints, and the training/inference loops around them."""

from .tensor import Tensor, no_grad

__all__ = ["Tensor", "no_grad"]
__version__ = "0.1.0"
