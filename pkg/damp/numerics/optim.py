"""
Named parameter storage and the RMSProp update.
"""
from __future__ import annotations

import logging
from collections.abc import Iterable, Iterator, Mapping

import numpy as np

from damp.core.exceptions import CheckpointError, ModelError
from damp.numerics.tensor import Tensor

logger = logging.getLogger("damp.numerics")

ACCUM_PREFIX = "opt."


class ParameterStore:
    """Trainable tensors by unique name, plus one RMSProp accumulator each.

    Initial values are drawn in registration order from a generator seeded
    with `seed`, so two stores built the same way are bitwise identical.
    """

    def __init__(self, seed: int = 0, init_range: float = 0.08):
        self.seed = seed
        self.init_range = init_range
        self._rng = np.random.default_rng(seed)
        self._params: dict[str, Tensor] = {}
        self._accum: dict[str, np.ndarray] = {}

    # ── Registration ───────────────────────────────────
    def create(self, name: str, shape: tuple[int, int], init: str = "uniform") -> Tensor:
        if name in self._params:
            raise ModelError(f"duplicate parameter name '{name}'")
        if init == "uniform":
            value = self._rng.uniform(-self.init_range, self.init_range, size=shape)
        elif init == "zeros":
            value = np.zeros(shape)
        else:
            raise ModelError(f"unknown initialiser '{init}'")
        return self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ModelError(f"duplicate parameter name '{name}'")
        tensor = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = tensor
        self._accum[name] = np.zeros_like(tensor.value)
        return tensor

    # ── Access ─────────────────────────────────────────
    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._params.items()

    def accumulator(self, name: str) -> np.ndarray:
        return self._accum[name]

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None

    def num_values(self) -> int:
        return sum(t.value.size for t in self._params.values())

    # ── Serialisation ──────────────────────────────────
    def state_dict(self, include_optimizer: bool = True) -> dict[str, np.ndarray]:
        state = {name: t.value for name, t in self._params.items()}
        if include_optimizer:
            state.update({ACCUM_PREFIX + name: acc for name, acc in self._accum.items()})
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        """Copy values in; validates everything before mutating anything."""
        for name, tensor in self._params.items():
            if name not in state:
                if strict:
                    raise CheckpointError(f"checkpoint lacks parameter '{name}'")
                continue
            if state[name].shape != tensor.value.shape:
                raise CheckpointError(
                    f"parameter '{name}' has shape {state[name].shape}, expected {tensor.value.shape}"
                )
        for name, tensor in self._params.items():
            if name in state:
                tensor.value = np.array(state[name], dtype=np.float64)
            accum = state.get(ACCUM_PREFIX + name)
            self._accum[name] = (
                np.array(accum, dtype=np.float64) if accum is not None else np.zeros_like(tensor.value)
            )

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.state_dict().items()}


def global_grad_norm(store: ParameterStore) -> float:
    total = 0.0
    for _, tensor in store.items():
        if tensor.grad is not None:
            total += float(np.sum(tensor.grad * tensor.grad))
    return float(np.sqrt(total))


def rmsprop_step(
    store: ParameterStore,
    lr: float = 1e-3,
    rho: float = 0.9,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    clip_norm: float | None = None,
) -> int:
    """One RMSProp update over every parameter that received a gradient.

    accum <- rho*accum + (1-rho)*g^2 ;  theta <- theta - lr*g/sqrt(accum+eps)
    Parameters outside the current graph (grad is None) are left untouched,
    weight decay included. Gradients are cleared afterwards. Returns the
    number of parameters updated.
    """
    factor = 1.0
    if clip_norm is not None:
        norm = global_grad_norm(store)
        if norm > clip_norm:
            factor = clip_norm / norm
            logger.debug("Clipping gradient norm %.4f -> %.4f", norm, clip_norm)

    updated = 0
    for name, tensor in store.items():
        if tensor.grad is None:
            continue
        grad = tensor.grad * factor
        if weight_decay:
            grad = grad + weight_decay * tensor.value
        accum = store._accum[name]
        accum *= rho
        accum += (1.0 - rho) * grad * grad
        tensor.value = tensor.value - lr * grad / np.sqrt(accum + eps)
        updated += 1
    store.zero_grad()
    return updated
