"""
Network building blocks: encoders, the pooled domain discriminator, attention
with a domain prior, and one decoder step with input switching.

Shapes: an encoder output U is |X| x w (one row per token), decoder states
are 1 x w rows, attention weights are 1 x |X| rows.
"""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, replace

import numpy as np

from damp.core.exceptions import DecodingError, ShapeError
from damp.numerics import ops
from damp.numerics.lstm import BiLSTMOutput, LSTMParams, bilstm_encode, lstm_cell
from damp.numerics.optim import ParameterStore
from damp.numerics.tensor import Tensor, constant


@dataclass(frozen=True)
class Dropout:
    rate: float
    rng: np.random.Generator | None
    training: bool

    def __call__(self, a: Tensor) -> Tensor:
        return ops.dropout(a, self.rate, self.rng, self.training)


NO_DROPOUT = Dropout(0.0, None, False)


# ── Encoder ────────────────────────────────────────────
@dataclass(frozen=True)
class EncoderParams:
    forward: LSTMParams
    backward: LSTMParams

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, input_dim: int, hidden: int) -> "EncoderParams":
        return cls(
            LSTMParams.create(store, f"{prefix}.fw", input_dim, hidden),
            LSTMParams.create(store, f"{prefix}.bw", input_dim, hidden),
        )


def encode(ids: Sequence[int], table: Tensor, params: EncoderParams, drop: Dropout = NO_DROPOUT) -> BiLSTMOutput:
    if not ids:
        raise ShapeError("encode (empty input)", (0,))
    embedded = drop(ops.embedding_gather(table, ids))
    out = bilstm_encode(embedded, params.forward, params.backward)
    return replace(out, states=drop(out.states))


# ── Domain discriminator ───────────────────────────────
@dataclass(frozen=True)
class DiscriminatorHead:
    w_ae: Tensor  # w x 1 pooling scorer
    w_d: Tensor  # w x 1 classifier
    b_d: Tensor  # 1 x 1

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, width: int) -> "DiscriminatorHead":
        return cls(
            store.create(f"{prefix}.w_ae", (width, 1)),
            store.create(f"{prefix}.w_d", (width, 1)),
            store.create(f"{prefix}.b_d", (1, 1), init="zeros"),
        )


def pool_and_discriminate(U: Tensor, head: DiscriminatorHead) -> tuple[Tensor, Tensor]:
    """Self-attentive pooling u = U^T softmax(U w_ae), then p = sigmoid(w_d . u + b_d).

    p is the probability that the utterance comes from a source domain.
    """
    if U.shape[0] < 1 or U.shape[1] != head.w_ae.shape[0]:
        raise ShapeError("pool_and_discriminate", U.shape, head.w_ae.shape)
    alpha = ops.softmax(ops.transpose(ops.matmul(U, head.w_ae)))
    u = ops.matmul(alpha, U)
    p = ops.sigmoid(ops.add(ops.matmul(u, head.w_d), head.b_d))
    return u, p


# ── Attention ──────────────────────────────────────────
@dataclass(frozen=True)
class Attention:
    context: Tensor
    prior_context: Tensor
    alpha: Tensor
    alpha_pri: Tensor


def prior_attention(U: Tensor, d: Tensor, q: Tensor | None) -> Attention:
    """Dot-product attention plus its prior-weighted twin.

    alpha = softmax(U d), alpha_pri = softmax((U d) * q). Negative scores are
    scaled by q as well, which pushes them further down. q=None is standard
    attention with alpha_pri = alpha.
    """
    if d.shape != (1, U.shape[1]):
        raise ShapeError("prior_attention", U.shape, d.shape)
    scores = ops.matmul(d, ops.transpose(U))
    alpha = ops.softmax(scores)
    context = ops.matmul(alpha, U)
    if q is None:
        return Attention(context, context, alpha, alpha)
    if q.shape != scores.shape:
        raise ShapeError("prior_attention (prior length)", U.shape, q.shape)
    alpha_pri = ops.softmax(ops.mul(scores, q))
    return Attention(context, ops.matmul(alpha_pri, U), alpha, alpha_pri)


def attend(memory: Tensor, d: Tensor) -> tuple[Tensor, Tensor]:
    attention = prior_attention(memory, d, None)
    return attention.context, attention.alpha


# ── Decoder ────────────────────────────────────────────
@dataclass(frozen=True)
class DecoderParams:
    lstm: LSTMParams
    init_W: Tensor
    init_b: Tensor
    ffn1_W: Tensor
    ffn1_b: Tensor
    out_W: Tensor
    out_b: Tensor

    @classmethod
    def create(
        cls,
        store: ParameterStore,
        prefix: str,
        input_dim: int,
        width: int,
        feature_dim: int,
        vocab_size: int,
    ) -> "DecoderParams":
        return cls(
            lstm=LSTMParams.create(store, f"{prefix}.lstm", input_dim, width),
            init_W=store.create(f"{prefix}.init.W", (width, width)),
            init_b=store.create(f"{prefix}.init.b", (1, width), init="zeros"),
            ffn1_W=store.create(f"{prefix}.ffn1.W", (feature_dim, width)),
            ffn1_b=store.create(f"{prefix}.ffn1.b", (1, width), init="zeros"),
            out_W=store.create(f"{prefix}.out.W", (width, vocab_size)),
            out_b=store.create(f"{prefix}.out.b", (1, vocab_size), init="zeros"),
        )

    @property
    def vocab_size(self) -> int:
        return self.out_b.shape[1]


@dataclass(frozen=True)
class DecoderState:
    h: Tensor
    c: Tensor
    inp: Tensor | None  # input for the next step
    t: int = 0

    def feed(self, inp: Tensor) -> "DecoderState":
        return replace(self, inp=inp)


def initial_state(encoded: BiLSTMOutput, params: DecoderParams, bos: Tensor) -> DecoderState:
    """d_0 = tanh(W [h_fw_last; h_bw_first] + b), zero cell, BOS embedding as i_0."""
    h = ops.tanh(ops.add(ops.matmul(encoded.final, params.init_W), params.init_b))
    return DecoderState(h=h, c=constant(np.zeros(h.shape)), inp=bos, t=0)


@dataclass(frozen=True)
class StepOutput:
    dist: Tensor  # 1 x |V|
    state: DecoderState  # inp left unset
    attention: Attention
    sketch_alpha: Tensor | None = None


def decode_step(
    params: DecoderParams,
    state: DecoderState,
    U: Tensor,
    q: Tensor | None,
    sketch_memory: Tensor | None = None,
    drop: Dropout = NO_DROPOUT,
) -> StepOutput:
    """LSTM step, prior attention over the utterance, optional sketch attention, output softmax."""
    if state.inp is None:
        raise DecodingError("decoder state has no input for the next step")
    h, c = lstm_cell(state.inp, state.h, state.c, params.lstm)
    d = drop(h)
    attention = prior_attention(U, d, q)
    features = [d, attention.context, attention.prior_context]
    sketch_alpha = None
    if sketch_memory is not None:
        sketch_context, sketch_alpha = attend(sketch_memory, d)
        features.append(sketch_context)
    feature = ops.concat(features)
    if feature.shape[1] != params.ffn1_W.shape[0]:
        raise ShapeError("decode_step features", feature.shape, params.ffn1_W.shape)
    hidden = ops.tanh(ops.add(ops.matmul(feature, params.ffn1_W), params.ffn1_b))
    dist = ops.softmax(ops.add(ops.matmul(hidden, params.out_W), params.out_b))
    return StepOutput(dist, DecoderState(h=h, c=c, inp=None, t=state.t + 1), attention, sketch_alpha)


def embed(table: Tensor, token_id: int, drop: Dropout = NO_DROPOUT) -> Tensor:
    return drop(ops.take_row(table, token_id))


def next_input(
    token_id: int,
    position: int,
    lf_to_sketch: Sequence[int | None] | None,
    sketch_memory: Tensor | None,
    table: Tensor,
    switch_W: Tensor | None = None,
    drop: Dropout = NO_DROPOUT,
) -> Tensor:
    """Input after emitting `token_id` at logical-form `position`.

    A token that corresponds to sketch token k feeds row k of the sketch
    encoding (projected to the embedding width when the widths differ);
    a slot-filling token feeds its own embedding.
    """
    if lf_to_sketch is None or sketch_memory is None:
        return embed(table, token_id, drop)
    if position >= len(lf_to_sketch):
        raise DecodingError(f"alignment exhausted at logical-form position {position}")
    k = lf_to_sketch[position]
    if k is None:
        return embed(table, token_id, drop)
    row = ops.take_row(sketch_memory, k)
    return ops.matmul(row, switch_W) if switch_W is not None else row
