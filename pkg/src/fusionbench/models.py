"""The three classifier architectures (MLP, CNN-1, CNN-2) over the engine."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .engine import Activation, Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2D, Parameter, Tensor
from .engine.archive import load_arrays, save_arrays
from .engine.tensor import DEFAULT_DTYPE
from .errors import DataError, ShapeError

KINDS = ("MLP", "CNN1", "CNN2")

_DEFAULT_HIDDEN = {"MLP": (120, 80, 40), "CNN1": (128,), "CNN2": (480, 224, 32)}
_DEFAULT_ACTS = {"MLP": ("tanh",) * 3, "CNN1": ("relu",), "CNN2": ("sigmoid", "relu", "relu")}
_DEFAULT_FILTERS = (32, 64, 128)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description.  ``None`` overrides fall back to the default layer sizes."""

    kind: str
    input_shape: tuple[int, ...]
    n_classes: int = 4
    hidden_units: tuple[int, ...] | None = None
    hidden_activations: tuple[str, ...] | None = None
    conv_filters: tuple[int, ...] | None = None
    kernel_size: int = 3
    dropout: float | None = None

    def __post_init__(self):
        kind = self.kind.upper().replace("-", "")
        if kind not in KINDS:
            raise ValueError(f"model kind must be one of {KINDS}, got {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        for name in ("hidden_units", "hidden_activations", "conv_filters"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(value))

    def resolved(self) -> "ModelConfig":
        hidden = self.hidden_units or _DEFAULT_HIDDEN[self.kind]
        acts = self.hidden_activations
        if acts is None:
            default = _DEFAULT_ACTS[self.kind]
            acts = default if len(default) == len(hidden) else (default[-1],) * len(hidden)
        return replace(
            self,
            hidden_units=tuple(hidden),
            hidden_activations=tuple(acts),
            conv_filters=None if self.kind == "MLP" else (self.conv_filters or _DEFAULT_FILTERS),
            dropout=(0.2 if self.kind == "CNN2" else 0.0) if self.dropout is None else self.dropout,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class Model:
    config: ModelConfig
    layers: list[Layer]
    seed: int
    dtype: np.dtype = field(default=np.dtype(DEFAULT_DTYPE))
    training: bool = False

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def n_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def train(self) -> "Model":
        self.training = True
        return self

    def eval(self) -> "Model":
        self.training = False
        return self

    def forward(self, x: Tensor | np.ndarray, rng: np.random.Generator | None = None) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        expected = self.config.input_shape
        if x.shape[1:] != expected:
            raise ShapeError("model input", ("N",) + expected, x.shape)
        for layer in self.layers:
            x = layer(x, training=self.training, rng=rng)
        return x

    __call__ = forward

    def describe(self) -> list[str]:
        """One line per layer, e.g. ``"conv1: conv2d(32, 3x3, valid)"``."""
        return [f"{layer.name}: {layer.describe()}" for layer in self.layers]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise DataError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise ShapeError(f"parameter '{name}'", p.shape, arrays[name].shape)
            p.value.data = arrays[name].astype(self.dtype, copy=True)

    def save(self, path: str | Path) -> None:
        meta = {"config": self.config.to_dict(), "seed": self.seed, "structure": self.describe()}
        save_arrays(path, self.state_dict(), meta)


def build(config: ModelConfig, seed: int = 0, dtype=DEFAULT_DTYPE) -> Model:
    """Instantiate the layer stack for ``config`` with Glorot-initialised weights."""
    cfg = config.resolved()
    rng = np.random.default_rng(seed)
    dtype = np.dtype(dtype)
    layers: list[Layer] = []
    shape = cfg.input_shape

    def push(layer: Layer):
        nonlocal shape
        out = layer.output_shape(shape)
        if any(d < 1 for d in out):
            raise ShapeError(f"{layer.name} output (input {cfg.input_shape} too small)", "positive sizes", out)
        shape = out
        layers.append(layer)

    if cfg.kind == "MLP":
        if len(shape) != 1:
            raise ShapeError("MLP input", ("D",), shape)
    else:
        if len(shape) != 3:
            raise ShapeError(f"{cfg.kind} input", ("H", "W", "C"), shape)
        for i, filters in enumerate(cfg.conv_filters, start=1):
            push(Conv2D(f"conv{i}", shape[2], filters, rng, cfg.kernel_size, dtype))
            push(Activation(f"conv{i}_relu", "relu"))
            push(MaxPool2D(f"pool{i}", 2))
        push(Flatten("flatten"))
        if cfg.dropout:
            push(Dropout("dropout", cfg.dropout))

    if len(cfg.hidden_activations) != len(cfg.hidden_units):
        raise ValueError("hidden_activations must have one entry per hidden layer")
    for i, (units, act) in enumerate(zip(cfg.hidden_units, cfg.hidden_activations), start=1):
        push(Dense(f"dense{i}", shape[0], units, rng, dtype))
        push(Activation(f"dense{i}_{act}", act))
    push(Dense("output", shape[0], cfg.n_classes, rng, dtype))
    push(Activation("output_softmax", "softmax"))
    return Model(config=config, layers=layers, seed=seed, dtype=dtype)


def load_model(path: str | Path, dtype=DEFAULT_DTYPE) -> Model:
    arrays, meta = load_arrays(path)
    model = build(ModelConfig.from_dict(meta["config"]), seed=meta.get("seed", 0), dtype=dtype)
    model.load_state_dict(arrays)
    return model


def predict_proba(model: Model, inputs: np.ndarray | Iterable, batch_size: int = 256) -> np.ndarray:
    """Class-probability rows for ``inputs`` with the model in eval mode (dropout off)."""
    if not isinstance(inputs, np.ndarray):
        inputs = np.stack([getattr(ex, "input", ex) for ex in inputs])
    was_training = model.training
    model.eval()
    try:
        out = [model.forward(inputs[i : i + batch_size]).data for i in range(0, len(inputs), batch_size)]
    finally:
        model.training = was_training
    if not out:
        return np.zeros((0, model.config.n_classes), dtype=np.float64)
    return np.concatenate(out).astype(np.float64)


def count_parameters(config: ModelConfig) -> int:
    """Parameter count from layer arithmetic alone, without allocating weights."""
    cfg = config.resolved()
    total = 0
    shape = cfg.input_shape
    if cfg.kind != "MLP":
        h, w, c = shape
        k = cfg.kernel_size
        for f in cfg.conv_filters:
            total += k * k * c * f + f
            h, w, c = (h - k + 1) // 2, (w - k + 1) // 2, f
        width = h * w * c
    else:
        width = math.prod(shape)
    for units in list(cfg.hidden_units) + [cfg.n_classes]:
        total += width * units + units
        width = units
    return total


def input_shape_for(kind: str, size: int, channels_per_image: int) -> tuple[int, ...]:
    """Model input shape for a paired example of two ``size``x``size`` images."""
    if kind.upper().replace("-", "") == "MLP":
        return (2 * size * size * channels_per_image,)
    return (size, size, 2 * channels_per_image)


def structure(config: ModelConfig) -> list[str]:
    return build(config, seed=0).describe()


__all__: Sequence[str] = (
    "KINDS",
    "Model",
    "ModelConfig",
    "build",
    "count_parameters",
    "input_shape_for",
    "load_model",
    "predict_proba",
)
