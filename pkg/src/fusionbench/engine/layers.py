"""Layer objects used to assemble the classifiers.

Shape rules (NHWC):

* ``Conv2D(filters, k)``: (N, H, W, C) -> (N, H-k+1, W-k+1, filters)
* ``MaxPool2D(2)``:       (N, H, W, C) -> (N, H//2, W//2, C)
* ``Flatten``:            (N, ...)     -> (N, prod(...))
* ``Dense(units)``:       (N, D)       -> (N, units)
* ``Dropout`` and ``Activation`` keep the shape.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from ..errors import ShapeError
from . import tensor as T
from .init import glorot_init
from .params import Parameter
from .tensor import DEFAULT_DTYPE, Tensor

MODES = ("train", "eval")


class Layer:
    kind = "layer"

    def __init__(self, name: str):
        self.name = name

    def parameters(self) -> Iterator[Parameter]:
        return iter(())

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        return input_shape

    def forward(self, x: Tensor, training: bool, rng: np.random.Generator | None) -> Tensor:
        raise NotImplementedError

    def describe(self) -> str:
        return self.kind

    def __call__(self, x: Tensor, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        T.check_finite(x, f"layer '{self.name}' ({self.describe()})")
        return self.forward(x, training, rng)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r}: {self.describe()})"


class Dense(Layer):
    kind = "dense"

    def __init__(self, name: str, in_features: int, units: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        super().__init__(name)
        self.in_features = in_features
        self.units = units
        self.weight = Parameter(f"{name}.weight", glorot_init((in_features, units), rng, dtype))
        self.bias = Parameter(f"{name}.bias", Tensor(np.zeros(units, dtype=dtype)))

    def parameters(self):
        yield self.weight
        yield self.bias

    def output_shape(self, input_shape):
        if len(input_shape) != 1 or input_shape[0] != self.in_features:
            raise ShapeError(f"layer '{self.name}'", (self.in_features,), input_shape)
        return (self.units,)

    def forward(self, x, training, rng):
        if x.data.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"layer '{self.name}'", ("N", self.in_features), x.shape)
        return T.matmul(x, self.weight.value) + self.bias.value

    def describe(self):
        return f"dense({self.units})"


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, name: str, in_channels: int, filters: int, rng: np.random.Generator, kernel_size: int = 3, dtype=DEFAULT_DTYPE):
        super().__init__(name)
        self.in_channels = in_channels
        self.filters = filters
        self.kernel_size = kernel_size
        k = kernel_size
        self.kernel = Parameter(f"{name}.kernel", glorot_init((k, k, in_channels, filters), rng, dtype))
        self.bias = Parameter(f"{name}.bias", Tensor(np.zeros(filters, dtype=dtype)))

    def parameters(self):
        yield self.kernel
        yield self.bias

    def output_shape(self, input_shape):
        if len(input_shape) != 3 or input_shape[2] != self.in_channels:
            raise ShapeError(f"layer '{self.name}'", ("H", "W", self.in_channels), input_shape)
        h, w, _ = input_shape
        k = self.kernel_size
        if h < k or w < k:
            raise ShapeError(f"layer '{self.name}'", f"spatial dims >= {k}", input_shape)
        return (h - k + 1, w - k + 1, self.filters)

    def forward(self, x, training, rng):
        if x.data.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeError(f"layer '{self.name}'", ("N", "H", "W", self.in_channels), x.shape)
        return T.conv2d(x, self.kernel.value, self.bias.value)

    def describe(self):
        k = self.kernel_size
        return f"conv2d({self.filters}, {k}x{k}, valid)"


class MaxPool2D(Layer):
    kind = "maxpool2d"

    def __init__(self, name: str, size: int = 2):
        super().__init__(name)
        self.size = size

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeError(f"layer '{self.name}'", ("H", "W", "C"), input_shape)
        h, w, c = input_shape
        return (h // self.size, w // self.size, c)

    def forward(self, x, training, rng):
        if x.data.ndim != 4:
            raise ShapeError(f"layer '{self.name}'", ("N", "H", "W", "C"), x.shape)
        return T.maxpool2d(x, self.size)

    def describe(self):
        return f"maxpool2d({self.size}x{self.size})"


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, input_shape):
        return (math.prod(input_shape),)

    def forward(self, x, training, rng):
        return T.flatten(x)


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, name: str, rate: float):
        super().__init__(name)
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, training, rng):
        return T.dropout(x, self.rate, training, rng)

    def describe(self):
        return f"dropout({self.rate:g})"


class Activation(Layer):
    kind = "activation"

    def __init__(self, name: str, function: str):
        super().__init__(name)
        if function not in T.ACTIVATIONS:
            raise ValueError(f"unknown activation {function!r}")
        self.function = function

    def forward(self, x, training, rng):
        return T.ACTIVATIONS[self.function](x)

    def describe(self):
        return self.function


def forward_layer(x: Tensor, layer: Layer, mode: str = "eval", rng: np.random.Generator | None = None) -> Tensor:
    """Run a single layer in ``"train"`` or ``"eval"`` mode."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return layer(x, training=mode == "train", rng=rng)
