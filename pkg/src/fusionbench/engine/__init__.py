"""Minimal reverse-mode autodiff engine: tensors, layers, loss, optimizers."""

from .archive import load_arrays, save_arrays
from .init import glorot_init
from .layers import Activation, Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2D, forward_layer
from .optim import OptimizerState, adam, optimizer_step, sgd
from .params import Parameter
from .tensor import Tensor, activation, cross_entropy, one_hot

__all__ = [
    "Activation",
    "Conv2D",
    "Dense",
    "Dropout",
    "Flatten",
    "Layer",
    "MaxPool2D",
    "OptimizerState",
    "Parameter",
    "Tensor",
    "activation",
    "adam",
    "backward",
    "cross_entropy",
    "forward_layer",
    "glorot_init",
    "load_arrays",
    "one_hot",
    "optimizer_step",
    "save_arrays",
    "sgd",
]


def backward(loss: Tensor, parameters) -> dict:
    """Backpropagate ``loss`` and return ``{name: grad}`` for each trainable parameter."""
    params = list(parameters)
    for p in params:
        p.value.zero_grad()
    loss.backward()
    return {p.name: p.grad for p in params if p.trainable and p.grad is not None}
