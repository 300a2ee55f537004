"""Reverse-mode differentiable tensors.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients.  Calling
:meth:`Tensor.backward` on a scalar walks the graph in reverse topological
order.  The graph is released afterwards; a second ``backward`` on the same
root raises :class:`~fusionbench.errors.GraphError`.

Image tensors use NHWC layout throughout (batch, height, width, channels).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import GraphError, NumericError, ShapeError

DEFAULT_DTYPE = np.float32


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_released")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        dtype=None,
        _parents: Sequence["Tensor"] = (),
        _backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
    ):
        arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = tuple(_parents)
        self._backward = _backward
        self._released = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the heavy lifting lives in the module-level functions
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _wrap(-1.0, self.dtype))

    def __sub__(self, other):
        return add(self, -_wrap(other, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self) -> "Tensor":
        return tsum(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf needing it."""
        if self._released:
            raise GraphError("backward() called twice on the same graph; run a new forward pass first")
        if grad is None:
            if self.data.size != 1:
                raise GraphError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            raise ShapeError("backward seed", self.data.shape, grad.shape)

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not _needs_grad(parent):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node._released = True


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and _needs_grad(p):
                stack.append((p, False))
    return order


def _wrap(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _node(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    parents = tuple(parents)
    if any(_needs_grad(p) for p in parents):
        return Tensor(data, _parents=parents, _backward=backward)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def check_finite(x: Tensor | np.ndarray, where: str) -> None:
    arr = x.data if isinstance(x, Tensor) else x
    if np.isnan(arr).any():
        raise NumericError(f"{where}: NaN in input of shape {arr.shape}")


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", f"(n, k) @ (k, m) with k={b.shape[0] if b.data.ndim else '?'}", f"{a.shape} @ {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, (a, b), backward)


def tsum(a: Tensor) -> Tensor:
    def backward(g):
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

    return _node(np.asarray(a.data.sum(), dtype=a.dtype), (a,), backward)


def mean(a: Tensor) -> Tensor:
    n = a.size

    def backward(g):
        return (np.full(a.shape, g / n, dtype=a.dtype),)

    return _node(np.asarray(a.data.mean(), dtype=a.dtype), (a,), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def backward(g):
        return (g.reshape(a.shape),)

    return _node(a.data.reshape(shape), (a,), backward)


def flatten(a: Tensor) -> Tensor:
    """Collapse every axis but the first (batch) one."""
    return reshape(a, (a.shape[0], -1))


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0)

    def backward(g):
        return (g * (y > 0),)

    return _node(y, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(g):
        return (g * (1 - y * y),)

    return _node(y, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(d.dtype)

    def backward(g):
        return (g * y * (1 - y),)

    return _node(y, (x,), backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _node(y, (x,), backward)


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softmax": softmax,
}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; choose from {sorted(ACTIVATIONS)}") from None
    check_finite(x, f"activation[{kind}]")
    return fn(x)


# ---------------------------------------------------------------------------
# convolution, pooling, dropout
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Valid-padding, stride-1 2-D convolution (cross-correlation).

    ``x`` is (N, H, W, C); ``kernel`` is (kh, kw, C, F); output is
    (N, H-kh+1, W-kw+1, F).
    """
    n, h, w, c = x.shape
    kh, kw, kc, f = kernel.shape
    if kc != c:
        raise ShapeError("conv2d", f"(N, H, W, {kc})", x.shape)
    ho, wo = h - kh + 1, w - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d", f"spatial dims >= ({kh}, {kw})", x.shape)

    # im2col with columns ordered (kh, kw, C) to match the kernel layout
    cols = np.concatenate(
        [x.data[:, i : i + ho, j : j + wo, :] for i in range(kh) for j in range(kw)], axis=-1
    ).reshape(n * ho * wo, kh * kw * c)
    wmat = kernel.data.reshape(kh * kw * c, f)
    out = cols @ wmat
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, f)

    def backward(g):
        g2 = g.reshape(n * ho * wo, f)
        gk = (cols.T @ g2).reshape(kernel.shape) if _needs_grad(kernel) else None
        gb = g2.sum(axis=0) if bias is not None else None
        gx = None
        if _needs_grad(x):
            gcols = (g2 @ wmat.T).reshape(n, ho, wo, kh, kw, c)
            gx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    gx[:, i : i + ho, j : j + wo, :] += gcols[:, :, :, i, j, :]
        return (gx, gk, gb) if bias is not None else (gx, gk)

    parents = (x, kernel, bias) if bias is not None else (x, kernel)
    return _node(out, parents, backward)


def maxpool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; trailing rows/cols that don't fill a window are dropped.

    The gradient of each window goes to its first maximal element (row-major order).
    """
    n, h, w, c = x.shape
    ho, wo = h // size, w // size
    if ho < 1 or wo < 1:
        raise ShapeError("maxpool2d", f"spatial dims >= ({size}, {size})", x.shape)
    offsets = [(i, j) for i in range(size) for j in range(size)]
    views = [x.data[:, i : ho * size : size, j : wo * size : size, :] for i, j in offsets]
    out = views[0].copy()
    for v in views[1:]:
        np.maximum(out, v, out=out)

    def backward(g):
        gx = np.zeros_like(x.data)
        taken = np.zeros(out.shape, dtype=bool)
        for (i, j), v in zip(offsets, views):
            hit = (v == out) & ~taken
            gx[:, i : ho * size : size, j : wo * size : size, :] = g * hit
            taken |= hit
        return (gx,)

    return _node(out, (x,), backward)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate); identity outside training."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit random generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1 - rate)

    def backward(g):
        return (g * keep,)

    return _node(x.data * keep, (x,), backward)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

LOSS_EPS = 1e-12


def cross_entropy(probs: Tensor, one_hot: Tensor | np.ndarray, eps: float = LOSS_EPS) -> Tensor:
    """Mean categorical cross-entropy over the batch, with probabilities clamped to [eps, 1-eps]."""
    labels = one_hot.data if isinstance(one_hot, Tensor) else np.asarray(one_hot)
    if probs.shape != labels.shape:
        raise ShapeError("cross_entropy", probs.shape, labels.shape)
    check_finite(probs, "cross_entropy")
    p = probs.data
    lo, hi = p.dtype.type(eps), p.dtype.type(1 - eps)
    clipped = np.clip(p, lo, hi)
    n = p.shape[0] if p.ndim > 1 else 1
    loss = -(labels * np.log(clipped)).sum() / n
    inside = (p >= lo) & (p <= hi)

    def backward(g):
        return (g * (-labels / clipped) * inside / n,)

    return _node(np.asarray(loss, dtype=p.dtype), (probs,), backward)


def one_hot(labels: Sequence[int] | np.ndarray, n_classes: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], n_classes), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1
    return out
