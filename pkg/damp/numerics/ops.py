"""
Differentiable primitives.

Each function computes the forward value with numpy and registers a backward
closure returning d(loss)/d(input) for every input. Shapes follow numpy
conventions on 2-D arrays; `add`, `sub` and `mul` broadcast 1 x n rows and
1 x 1 scalars.
"""
from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from damp.core.exceptions import ShapeError
from damp.numerics.tensor import Tensor

TINY = 1e-300


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(op, a.shape, b.shape)


# ── Arithmetic ─────────────────────────────────────────
def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(a.value + b.value, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return Tensor.from_op(a.value - b.value, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product."""
    _broadcast_shape("elementwise_mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return Tensor.from_op(a.value * b.value, (a, b), backward)


elementwise_mul = mul


def scale(a: Tensor, factor: float) -> Tensor:
    def backward(g):
        return (g * factor,)

    return Tensor.from_op(a.value * factor, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def backward(g):
        return g @ b.value.T, a.value.T @ g

    return Tensor.from_op(a.value @ b.value, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    def backward(g):
        return (g.T,)

    return Tensor.from_op(a.value.T.copy(), (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        return (np.full(a.shape, g[0, 0]),)

    return Tensor.from_op(np.array([[a.value.sum()]]), (a,), backward)


# ── Structure ──────────────────────────────────────────
def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ShapeError("concat")
    other = 1 - axis
    if any(t.shape[other] != tensors[0].shape[other] for t in tensors):
        raise ShapeError("concat", *(t.shape for t in tensors))
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        if axis == 1:
            return [g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors))]
        return [g[bounds[i]:bounds[i + 1], :] for i in range(len(tensors))]

    return Tensor.from_op(np.concatenate([t.value for t in tensors], axis=axis), tensors, backward)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    return concat(rows, axis=0)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"slice_cols[{start}:{stop}]", a.shape)

    def backward(g):
        full = np.zeros(a.shape)
        full[:, start:stop] = g
        return (full,)

    return Tensor.from_op(a.value[:, start:stop].copy(), (a,), backward)


def take_row(a: Tensor, index: int) -> Tensor:
    if not 0 <= index < a.shape[0]:
        raise ShapeError(f"take_row[{index}]", a.shape)

    def backward(g):
        full = np.zeros(a.shape)
        full[index] = g[0]
        return (full,)

    return Tensor.from_op(a.value[index:index + 1].copy(), (a,), backward)


def embedding_gather(table: Tensor, indices: Sequence[int]) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= table.shape[0])):
        raise ShapeError("embedding_gather", table.shape, (idx.size,))

    def backward(g):
        full = np.zeros(table.shape)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor.from_op(table.value[idx], (table,), backward)


# ── Nonlinearities ─────────────────────────────────────
def sigmoid(a: Tensor) -> Tensor:
    x = a.value
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (g * out * (1.0 - out),)

    return Tensor.from_op(out, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)

    def backward(g):
        return (g * (1.0 - out * out),)

    return Tensor.from_op(out, (a,), backward)


def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax."""
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return Tensor.from_op(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.value < 0):
        raise ValueError("log: negative input")
    safe = np.maximum(a.value, TINY)

    def backward(g):
        return (g / safe,)

    return Tensor.from_op(np.log(safe), (a,), backward)


# ── Training utilities ─────────────────────────────────
def dropout(a: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; exact identity when not training or rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)

    def backward(g):
        return (g * mask,)

    return Tensor.from_op(a.value * mask, (a,), backward)


def cross_entropy(dist: Tensor, target: int) -> Tensor:
    """-log dist[target] for a 1 x V probability row."""
    if dist.shape[0] != 1 or not 0 <= target < dist.shape[1]:
        raise ShapeError(f"cross_entropy[target={target}]", dist.shape)
    p = max(dist.value[0, target], TINY)

    def backward(g):
        full = np.zeros(dist.shape)
        full[0, target] = -g[0, 0] / p
        return (full,)

    return Tensor.from_op(np.array([[-np.log(p)]]), (dist,), backward)


def gradient_reversal(a: Tensor, scale_: float = 1.0) -> Tensor:
    """Identity forward; backward multiplies the incoming gradient by -scale."""
    if scale_ < 0:
        raise ValueError("gradient reversal scale must be non-negative")

    def backward(g):
        return (-scale_ * g,)

    return Tensor.from_op(a.value.copy(), (a,), backward)
