"""Minimal reverse-mode autodiff over dense float64 arrays.

Only the operations needed by the encoder, denoiser and Q-networks are
implemented: (batched) matmul, broadcasting add/sub/mul, ReLU, softmax,
layer normalization, axis means/sums, reshape/transpose, concat/stack and
per-row gathering. Everything is computed in 64-bit precision.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


class GraphError(RuntimeError):
    """Raised on invalid use of the computation graph."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph construction (forward values only)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """Node in the computation graph holding a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    t = Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True)
    t.zero_grad()
    return t


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _make(data, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accum(t: Tensor, grad: np.ndarray):
    if not t.requires_grad:
        return
    grad = _unbroadcast(np.asarray(grad, dtype=np.float64), t.data.shape)
    if t.grad is None:
        # Store without copying; incoming arrays may alias a child's finished
        # gradient, so later accumulations must allocate instead of adding in
        # place (see below).
        t.grad = grad
    else:
        t.grad = t.grad + grad


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * b.data)
        if b.requires_grad:
            _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), backward)


def scale(a, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)

    def backward(g):
        _accum(a, g * s)

    return _make(a.data * s, (a,), backward)


def matmul(a, b) -> Tensor:
    """Matrix product; supports stacked (batched) operands of ndim >= 2."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise GraphError("matmul requires operands with ndim >= 2")

    def backward(g):
        if a.requires_grad:
            _accum(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            _accum(b, np.swapaxes(a.data, -1, -2) @ g)

    return _make(a.data @ b.data, (a, b), backward)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0.0

    def backward(g):
        _accum(a, g * mask)

    return _make(a.data * mask, (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        _accum(a, s * (g - inner))

    return _make(s, (a,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the trailing axis: gain * (x - mean)/sqrt(var + eps) + bias."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    n = x.data.shape[-1]
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise GraphError("layer_norm gain/bias must match the trailing axis")
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    out = gain.data * xhat + bias.data

    def backward(g):
        _accum(bias, g.reshape(-1, n).sum(axis=0))
        _accum(gain, (g * xhat).reshape(-1, n).sum(axis=0))
        gy = g * gain.data
        m1 = gy.mean(axis=-1, keepdims=True)
        m2 = (gy * xhat).mean(axis=-1, keepdims=True)
        _accum(x, inv * (gy - m1 - xhat * m2))

    return _make(out, (x, gain, bias), backward)


def mean(a, axis: int, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.shape[axis]

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g / count, a.data.shape))

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward)


def sum_all(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        _accum(a, np.broadcast_to(g, a.data.shape))

    return _make(a.data.sum(), (a,), backward)


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size

    def backward(g):
        _accum(a, np.broadcast_to(g / count, a.data.shape))

    return _make(a.data.mean(), (a,), backward)


def mse(pred, target) -> Tensor:
    """Mean squared error over all entries."""
    diff = sub(pred, target)
    return mean_all(mul(diff, diff))


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accum(a, g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), backward)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    original = a.data.shape

    def backward(g):
        _accum(a, g.reshape(original))

    return _make(a.data.reshape(tuple(shape)), (a,), backward)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            _accum(part, g[tuple(index)])

    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), backward)


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]

    def backward(g):
        for i, part in enumerate(parts):
            _accum(part, np.take(g, i, axis=axis))

    return _make(np.stack([p.data for p in parts], axis=axis), tuple(parts), backward)


def take_per_row(a, indices) -> Tensor:
    """Gather a[i, indices[i]] from a 2-D tensor; returns shape (n,)."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    rows = np.arange(a.data.shape[0])

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (rows, idx), g)
        _accum(a, full)

    return _make(a.data[rows, idx], (a,), backward)


def backward(loss: Tensor):
    """Accumulate gradients of a scalar loss into all reachable parameters."""
    if loss.size != 1:
        raise GraphError("backward requires a scalar loss node")
    if loss._consumed:
        raise GraphError("graph already backpropagated; rebuild it before reuse")
    loss._consumed = True
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack_nodes: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack_nodes:
        node, expanded = stack_nodes.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_nodes.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack_nodes.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node.grad is None or node._backward is None:
            continue
        node._backward(node.grad)
