"""Neural-network building blocks: autodiff tensors, layers, optimizer."""

from visr.nn.tensor import Tensor, backward, no_grad

__all__ = ["Tensor", "backward", "no_grad"]
