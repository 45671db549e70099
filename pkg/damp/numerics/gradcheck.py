"""
Finite-difference verification of backpropagated gradients.
"""
from __future__ import annotations

import logging
from collections.abc import Callable, Iterable, Mapping

import numpy as np

from damp.core.exceptions import ShapeError
from damp.numerics.optim import ParameterStore
from damp.numerics.tensor import Tensor, no_grad

logger = logging.getLogger("damp.gradcheck")


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(
    build_loss: Callable[[], Tensor],
    params: ParameterStore | Mapping[str, Tensor] | Iterable[Tensor],
    step: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
    floor: float = 1e-8,
) -> float:
    """Max relative error between backprop and central differences.

    `build_loss` must rebuild the graph from the current parameter values and
    be deterministic. With `max_entries`, each tensor is checked on a seeded
    random subset of that many entries instead of all of them. `floor` bounds
    the denominator of the relative error from below, so entries whose
    gradient is near zero are judged on absolute error.
    """
    named = _named(params)
    for tensor in named.values():
        tensor.grad = None
    loss = build_loss()
    if loss.value.size != 1:
        raise ShapeError("grad_check (loss must be scalar)", loss.shape)
    loss.backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.value)) for name, t in named.items()
    }
    for tensor in named.values():
        tensor.grad = None

    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_at = ""
    with no_grad():
        for name, tensor in named.items():
            tensor.value = np.ascontiguousarray(tensor.value)
            flat = tensor.value.reshape(-1)  # view: edits reach the tensor
            entries = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                entries = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
            for idx in entries:
                original = flat[idx]
                flat[idx] = original + step
                plus = build_loss().item()
                flat[idx] = original - step
                minus = build_loss().item()
                flat[idx] = original
                numeric = (plus - minus) / (2.0 * step)
                err = relative_error(float(analytic[name].reshape(-1)[idx]), numeric, floor)
                if err > worst:
                    worst, worst_at = err, f"{name}[{idx}]"
    logger.info("grad_check: %d tensors, max relative error %.3e at %s", len(named), worst, worst_at or "-")
    return worst


def _named(params) -> dict[str, Tensor]:
    if isinstance(params, ParameterStore):
        return dict(params.items())
    if isinstance(params, Mapping):
        return dict(params)
    return {t.name or f"param{i}": t for i, t in enumerate(params)}
