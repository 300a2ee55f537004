from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import DEFAULT_DTYPE, Tensor


def fans(shape: Sequence[int]) -> tuple[int, int]:
    """(fan_in, fan_out) for a dense (in, out) or conv (kh, kw, in, out) weight."""
    shape = tuple(shape)
    if len(shape) == 1:
        return shape[0], shape[0]
    if len(shape) == 2:
        return shape[0], shape[1]
    receptive = math.prod(shape[:-2])
    return shape[-2] * receptive, shape[-1] * receptive


def glorot_bound(shape: Sequence[int]) -> float:
    fan_in, fan_out = fans(shape)
    return math.sqrt(6.0 / (fan_in + fan_out))


def glorot_init(shape: Sequence[int], rng_seed: int | np.random.Generator, dtype=DEFAULT_DTYPE) -> Tensor:
    """Glorot/Xavier uniform initialisation in +-sqrt(6 / (fan_in + fan_out))."""
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ValueError(f"glorot_init needs a non-empty shape of positive sizes, got {shape}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    bound = glorot_bound(shape)
    # draw in float64 so float32 and float64 models share the same initial values
    values = rng.uniform(-bound, bound, size=shape)
    return Tensor(values.astype(dtype))
