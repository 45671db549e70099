"""
LSTM cell and bidirectional encoder built from the differentiable primitives.

Gates use one fused weight matrix W of shape (input + hidden) x 4*hidden laid
out as [input | forget | output | candidate].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from damp.core.exceptions import ShapeError
from damp.numerics import ops
from damp.numerics.optim import ParameterStore
from damp.numerics.tensor import Tensor


@dataclass(frozen=True)
class LSTMParams:
    W: Tensor
    b: Tensor

    @property
    def hidden(self) -> int:
        return self.b.shape[1] // 4

    @property
    def input_dim(self) -> int:
        return self.W.shape[0] - self.hidden

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, input_dim: int, hidden: int) -> "LSTMParams":
        return cls(
            W=store.create(f"{prefix}.W", (input_dim + hidden, 4 * hidden)),
            b=store.create(f"{prefix}.b", (1, 4 * hidden), init="zeros"),
        )


def zero_state(hidden: int) -> Tensor:
    return Tensor(np.zeros((1, hidden)))


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, params: LSTMParams) -> tuple[Tensor, Tensor]:
    n = params.hidden
    if x.shape != (1, params.input_dim) or h.shape != (1, n) or c.shape != (1, n):
        raise ShapeError("lstm_cell", x.shape, h.shape, c.shape, params.W.shape)
    z = ops.add(ops.matmul(ops.concat([x, h]), params.W), params.b)
    i = ops.sigmoid(ops.slice_cols(z, 0, n))
    f = ops.sigmoid(ops.slice_cols(z, n, 2 * n))
    o = ops.sigmoid(ops.slice_cols(z, 2 * n, 3 * n))
    g = ops.tanh(ops.slice_cols(z, 3 * n, 4 * n))
    c_next = ops.add(ops.mul(f, c), ops.mul(i, g))
    h_next = ops.mul(o, ops.tanh(c_next))
    return h_next, c_next


@dataclass(frozen=True)
class BiLSTMOutput:
    states: Tensor  # |X| x 2*hidden, forward half first
    final_forward: Tensor  # forward state after the last token
    final_backward: Tensor  # backward state after the first token

    @property
    def final(self) -> Tensor:
        return ops.concat([self.final_forward, self.final_backward])


def run_lstm(inputs: Tensor, params: LSTMParams, reverse: bool = False) -> list[Tensor]:
    """Hidden state per input row, in input order."""
    steps = range(inputs.shape[0] - 1, -1, -1) if reverse else range(inputs.shape[0])
    h = zero_state(params.hidden)
    c = zero_state(params.hidden)
    outputs: dict[int, Tensor] = {}
    for t in steps:
        h, c = lstm_cell(ops.take_row(inputs, t), h, c, params)
        outputs[t] = h
    return [outputs[t] for t in range(inputs.shape[0])]


def bilstm_encode(inputs: Tensor, forward: LSTMParams, backward: LSTMParams) -> BiLSTMOutput:
    if inputs.shape[0] < 1:
        raise ShapeError("bilstm_encode", inputs.shape)
    fw = run_lstm(inputs, forward)
    bw = run_lstm(inputs, backward, reverse=True)
    rows = [ops.concat([f, b]) for f, b in zip(fw, bw)]
    return BiLSTMOutput(states=ops.stack_rows(rows), final_forward=fw[-1], final_backward=bw[0])
