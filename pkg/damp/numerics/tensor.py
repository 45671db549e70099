"""
Reverse-mode automatic differentiation over dense float64 matrices.

A Tensor is always two-dimensional (vectors are 1 x n rows, scalars 1 x 1).
Operations in damp.numerics.ops create result tensors that remember their
parents and a backward closure mapping the output gradient to one gradient
per parent. `Tensor.backward()` walks the graph in reverse topological order.

Graph recording is thread-local and can be switched off with `no_grad()`,
which is what inference uses.
"""
from __future__ import annotations

import contextlib
import threading
from collections.abc import Callable, Iterator, Sequence

import numpy as np

from damp.core.exceptions import ShapeError

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    previous = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        array = np.asarray(value, dtype=np.float64)
        if array.ndim == 0:
            array = array.reshape(1, 1)
        elif array.ndim == 1:
            array = array.reshape(1, -1)
        elif array.ndim != 2:
            raise ShapeError("tensor", array.shape)
        self.value: np.ndarray = array
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @classmethod
    def from_op(cls, value: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        """Result of an operation; records the graph edge only when needed."""
        out = cls(value)
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # ── Introspection ──────────────────────────────────
    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape  # type: ignore[return-value]

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError("item", self.shape)
        return float(self.value[0, 0])

    def numpy(self) -> np.ndarray:
        return self.value

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # ── Backpropagation ────────────────────────────────
    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.value.size != 1:
                raise ShapeError("backward (non-scalar output needs an explicit gradient)", self.shape)
            grad = np.ones_like(self.value)
        order = self._topological_order()
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf: accumulate into the persistent buffer
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    def _topological_order(self) -> list["Tensor"]:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))
        return order

    # ── Operator sugar (see damp.numerics.ops) ─────────
    def __add__(self, other):
        from damp.numerics import ops
        return ops.add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        from damp.numerics import ops
        return ops.sub(self, _wrap(other))

    def __rsub__(self, other):
        from damp.numerics import ops
        return ops.sub(_wrap(other), self)

    def __mul__(self, other):
        from damp.numerics import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        from damp.numerics import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from damp.numerics import ops
        return ops.matmul(self, _wrap(other))

    @property
    def T(self) -> "Tensor":
        from damp.numerics import ops
        return ops.transpose(self)


def _wrap(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)
