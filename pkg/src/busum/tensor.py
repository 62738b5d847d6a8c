"""Dense float tensors with reverse-mode automatic differentiation.

Minimal tape-based engine: each op returns a new Tensor holding a closure
that maps the output gradient to parent gradients.  `backward(loss)` walks
the graph in reverse topological order and accumulates into `.grad`.

Model code uses float32; gradient-verification tests run the same graphs in
float64 (ops preserve the input dtype).
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_const_like(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _const_like(value, ref: Tensor) -> Tensor:
    return Tensor(np.asarray(value, dtype=ref.dtype))


def _as_array(other, dtype) -> np.ndarray:
    if isinstance(other, Tensor):
        return other.data
    return np.asarray(other, dtype=dtype)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    live = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if live:
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a: Tensor, b) -> Tensor:
    bd = _as_array(b, a.dtype)
    parents = (a, b) if isinstance(b, Tensor) else (a,)

    def bw(g):
        ga = _unbroadcast(g, a.data.shape)
        if isinstance(b, Tensor):
            return ga, _unbroadcast(g, b.data.shape)
        return (ga,)

    return _make(a.data + bd, parents, bw)


def sub(a: Tensor, b) -> Tensor:
    bd = _as_array(b, a.dtype)
    parents = (a, b) if isinstance(b, Tensor) else (a,)

    def bw(g):
        ga = _unbroadcast(g, a.data.shape)
        if isinstance(b, Tensor):
            return ga, _unbroadcast(-g, b.data.shape)
        return (ga,)

    return _make(a.data - bd, parents, bw)


def mul(a: Tensor, b) -> Tensor:
    bd = _as_array(b, a.dtype)
    parents = (a, b) if isinstance(b, Tensor) else (a,)

    def bw(g):
        ga = _unbroadcast(g * bd, a.data.shape)
        if isinstance(b, Tensor):
            return ga, _unbroadcast(g * a.data, b.data.shape)
        return (ga,)

    return _make(a.data * bd, parents, bw)


def div(a: Tensor, b) -> Tensor:
    bd = _as_array(b, a.dtype)
    parents = (a, b) if isinstance(b, Tensor) else (a,)

    def bw(g):
        ga = _unbroadcast(g / bd, a.data.shape)
        if isinstance(b, Tensor):
            gb = _unbroadcast(-g * a.data / (bd * bd), b.data.shape)
            return ga, gb
        return (ga,)

    return _make(a.data / bd, parents, bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)
        return ga, gb

    return _make(np.matmul(a.data, b.data), (a, b), bw)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).astype(a.dtype, copy=True),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).astype(a.dtype, copy=True),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]

    def bw(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(g, axis)
        scaled = gg / count
        return (np.broadcast_to(scaled, a.data.shape).astype(a.dtype, copy=True),)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), bw)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return _make(out_data, (a,), lambda g: (g * out_data,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)
    return _make(out_data, (a,), lambda g: (g / (2.0 * out_data),))


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    return _make(out_data, (a,), lambda g: (g * (1.0 - out_data * out_data),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    z = np.exp(-np.abs(x))
    out_data = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(a.dtype)
    return _make(out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    out_data = np.clip(a.data, lo, hi)
    inside = ((a.data > lo) & (a.data < hi)).astype(a.dtype)
    return _make(out_data, (a,), lambda g: (g * inside,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; rejects non-finite inputs."""
    if not np.isfinite(a.data).all():
        raise ValueError("non-finite logits")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - dot),)

    return _make(out_data, (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    def bw(g):
        inv = None if axes is None else np.argsort(axes)
        return (np.transpose(g, inv),)

    return _make(np.transpose(a.data, axes), (a,), bw)


def _is_fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (np.ndarray, list)) for i in items)


def take(a: Tensor, idx) -> Tensor:
    """Generic indexing; the backward pass scatter-adds into the input shape."""
    fancy = _is_fancy(idx)

    def bw(g):
        buf = np.zeros_like(a.data)
        if fancy:
            np.add.at(buf, idx, g)
        else:
            buf[idx] += g
        return (buf,)

    return _make(a.data[idx], (a,), bw)


def dropout(a: Tensor, rate: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout; identity when not training or rate == 0."""
    if not training or rate <= 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate).astype(a.dtype) / (1.0 - rate)
    return mul(a, keep)


def backward(loss: Tensor) -> None:
    """Populate .grad for every reachable tensor that requires grad; accumulates."""
    if loss.data.size != 1:
        raise ValueError("backward requires a scalar loss")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack_.append((p, False))

    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in flowing:
                flowing[id(p)] = flowing[id(p)] + pg
            else:
                flowing[id(p)] = pg


def apply_op(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Hook for custom differentiable ops defined outside this module."""
    return _make(data, parents, backward_fn)


def parameter(shape, rng: np.random.Generator, scale: float = 0.1, name: str | None = None) -> Tensor:
    """Trainable weight, uniform(-scale, scale), float32."""
    data = rng.uniform(-scale, scale, size=shape).astype(np.float32)
    return Tensor(data, requires_grad=True, name=name)


def zeros_param(shape, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True, name=name)
