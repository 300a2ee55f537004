from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class Parameter:
    """A named, optionally trainable tensor owned by a model."""

    name: str
    value: Tensor
    trainable: bool = True

    def __post_init__(self):
        self.value.requires_grad = self.trainable
        self.value.name = self.name

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.value.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape
