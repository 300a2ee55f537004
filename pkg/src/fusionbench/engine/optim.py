"""SGD and Adam over named parameters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from ..errors import NumericError
from .params import Parameter


@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"optimizer kind must be 'sgd' or 'adam', got {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.kind == "adam" and not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie strictly between 0 and 1")


def sgd(learning_rate: float = 0.01) -> OptimizerState:
    return OptimizerState(kind="sgd", learning_rate=learning_rate)


def adam(learning_rate: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> OptimizerState:
    return OptimizerState("adam", learning_rate, beta1, beta2, epsilon)


def optimizer_step(
    params: Iterable[Parameter],
    state: OptimizerState,
    grads: Mapping[str, np.ndarray] | None = None,
) -> OptimizerState:
    """Update ``params`` in place from ``grads`` (default: each parameter's ``.grad``).

    Parameters without a gradient (frozen, or untouched by the last forward
    pass) are skipped.  The state is mutated and returned for chaining.
    """
    params = [p for p in params if p.trainable]
    updates = []
    for p in params:
        g = grads.get(p.name) if grads is not None else p.grad
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient for {p.name} has shape {g.shape}, parameter has {p.shape}")
        if np.isnan(g).any():
            raise NumericError(f"NaN gradient for parameter {p.name}")
        updates.append((p, g))

    lr = state.learning_rate
    if state.kind == "sgd":
        for p, g in updates:
            p.value.data -= (lr * g).astype(p.data.dtype)
        state.step_count += 1
        return state

    state.step_count += 1
    t = state.step_count
    b1, b2, eps = state.adam_beta1, state.adam_beta2, state.adam_epsilon
    corr1 = 1 - b1**t
    corr2 = 1 - b2**t
    for p, g in updates:
        m = state.first_moment.get(p.name)
        v = state.second_moment.get(p.name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        state.first_moment[p.name] = m
        state.second_moment[p.name] = v
        m_hat = m / corr1
        v_hat = v / corr2
        p.value.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)
    return state
