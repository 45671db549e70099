"""
The coarse-to-fine domain-adaptive parser network.

Coarse stage: utterance encoder (enc1) -> sketch decoder (dec1) with the
coarse relevance prior, plus a pooled domain discriminator (disc_c) trained
adversarially. Fine stage: utterance encoder (enc2) and sketch encoder (enc3)
-> logical-form decoder (dec2) with the fine prior, sketch attention and input
switching, plus a conventionally trained discriminator (disc_f).

Strategies reuse the same network with parts switched off; see `profile_for`.
"""
from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np

from damp.ai.layers import (
    DecoderParams,
    DecoderState,
    DiscriminatorHead,
    Dropout,
    EncoderParams,
    NO_DROPOUT,
    StepOutput,
    decode_step,
    embed,
    encode,
    initial_state,
    next_input,
    pool_and_discriminate,
)
from damp.ai.losses import domain_confusion_loss, domain_discrimination_loss, sequence_cross_entropy
from damp.core.exceptions import ModelError
from damp.numerics import ops
from damp.numerics.lstm import BiLSTMOutput
from damp.numerics.optim import ParameterStore
from damp.numerics.tensor import Tensor, constant, no_grad
from damp.schemas.model import Hyperparams, LossBreakdown
from damp.schemas.train import Strategy
from damp.services.preprocess import PreparedInstance, Vocabularies
from damp.services.relevance import PriorVector
from damp.services.sketch import PlanStep
from damp.services.vocab import BOS_ID, EOS_ID, RESERVED

logger = logging.getLogger("damp.model")

Adversary = Literal["confusion", "discrimination", "reversal"]
Stage = Literal["coarse", "fine"]

FINE_PREFIXES = ("enc2.", "enc3.", "dec2.", "disc_f.", "emb.lf")


@dataclass(frozen=True)
class StrategyProfile:
    two_stage: bool = True
    use_prior: bool = True
    coarse_adversary: Adversary | None = "confusion"
    fine_adversary: Adversary | None = "discrimination"
    fine_target_only: bool = False


def profile_for(strategy: Strategy, hyperparams: Hyperparams) -> StrategyProfile:
    coarse: Adversary = "reversal" if hyperparams.reverse_grad_discriminator else "confusion"
    match strategy:
        case "damp":
            return StrategyProfile(coarse_adversary=coarse)
        case "damp_no_att":
            return StrategyProfile(use_prior=False, coarse_adversary=coarse)
        case "damp_no_dis":
            return StrategyProfile(coarse_adversary=None, fine_adversary=None)
        case "seq2seq":
            return StrategyProfile(two_stage=False, use_prior=False, coarse_adversary=None, fine_adversary=None)
        case "coarse2fine_mix" | "pretrain_finetune":
            return StrategyProfile(use_prior=False, coarse_adversary=None, fine_adversary=None)
        case "param_share":
            return StrategyProfile(
                use_prior=False, coarse_adversary=None, fine_adversary=None, fine_target_only=True
            )
        case "grad_reversal":
            return StrategyProfile(use_prior=False, coarse_adversary="reversal", fine_adversary="reversal")
    raise ModelError(f"unknown strategy '{strategy}'")


def is_fine_parameter(name: str) -> bool:
    return name.startswith(FINE_PREFIXES)


@dataclass
class TeacherForced:
    """One stage run on gold targets."""

    ce: Tensor
    encoded: BiLSTMOutput
    steps: list[StepOutput]


class DampParser:
    def __init__(
        self,
        strategy: Strategy,
        hyperparams: Hyperparams,
        vocabs: Vocabularies,
        seed: int = 0,
        utterance_embeddings: np.ndarray | None = None,
    ):
        self.strategy = strategy
        self.hyperparams = hyperparams
        self.vocabs = vocabs
        self.profile = profile_for(strategy, hyperparams)
        self.store = ParameterStore(seed=seed, init_range=hyperparams.init_range)
        self._build(utterance_embeddings)
        logger.info(
            "Built %s network: %d tensors, %d values", strategy, len(self.store), self.store.num_values()
        )

    # ── Parameters ─────────────────────────────────────
    def _build(self, utterance_embeddings: np.ndarray | None) -> None:
        hp, store, v = self.hyperparams, self.store, self.vocabs
        E, h, W = hp.embedding_dim, hp.per_direction_hidden, hp.encoder_output_width

        if utterance_embeddings is not None:
            if utterance_embeddings.shape != (len(v.utterance), E):
                raise ModelError(
                    f"utterance embeddings have shape {utterance_embeddings.shape}, "
                    f"expected {(len(v.utterance), E)}"
                )
            self.emb_utt = store.add("emb.utt", utterance_embeddings)
        else:
            self.emb_utt = store.create("emb.utt", (len(v.utterance), E))
        self.enc1 = EncoderParams.create(store, "enc1", E, h)

        if not self.profile.two_stage:
            self.emb_lf = store.create("emb.lf", (len(v.logical_form), E))
            self.dec_s2s = DecoderParams.create(store, "dec_s2s", E, W, 3 * W, len(v.logical_form))
            return

        self.disc_c = DiscriminatorHead.create(store, "disc_c", W)
        self.emb_sketch = store.create("emb.sketch", (len(v.sketch), E))
        self.dec1 = DecoderParams.create(store, "dec1", E, W, 3 * W, len(v.sketch))
        self.enc2 = EncoderParams.create(store, "enc2", E, h)
        self.enc3 = EncoderParams.create(store, "enc3", E, h)
        self.disc_f = DiscriminatorHead.create(store, "disc_f", W)
        self.emb_lf = store.create("emb.lf", (len(v.logical_form), E))
        self.dec2 = DecoderParams.create(store, "dec2", E, W, 4 * W, len(v.logical_form))
        # sketch encodings replace embeddings as decoder inputs
        self.switch_W = store.create("dec2.switch.W", (W, E)) if E != W else None

    def fine_parameter_names(self) -> list[str]:
        return [name for name in self.store if is_fine_parameter(name)]

    def prior(self, prior: PriorVector) -> Tensor | None:
        return constant(prior.q) if self.profile.use_prior else None

    # ── Teacher-forced passes ──────────────────────────
    def _run_gold(
        self,
        params: DecoderParams,
        encoded: BiLSTMOutput,
        table: Tensor,
        targets: Sequence[int],
        q: Tensor | None,
        memory: Tensor | None,
        feed: Callable[[int, int], Tensor],
        drop: Dropout,
    ) -> TeacherForced:
        state = initial_state(encoded, params, embed(table, BOS_ID, drop))
        steps: list[StepOutput] = []
        for t, y in enumerate(targets):
            out = decode_step(params, state, encoded.states, q, memory, drop)
            steps.append(out)
            if t + 1 < len(targets):
                state = out.state.feed(feed(y, t))
        ce = sequence_cross_entropy([s.dist for s in steps], targets)
        return TeacherForced(ce, encoded, steps)

    def coarse_forced(self, inst: PreparedInstance, drop: Dropout = NO_DROPOUT) -> TeacherForced:
        self._require_two_stage()
        encoded = encode(inst.utterance_ids, self.emb_utt, self.enc1, drop)
        return self._run_gold(
            self.dec1, encoded, self.emb_sketch,
            list(inst.sketch_ids) + [EOS_ID],
            self.prior(inst.coarse_prior), None,
            lambda y, _t: embed(self.emb_sketch, y, drop), drop,
        )

    def fine_forced(self, inst: PreparedInstance, drop: Dropout = NO_DROPOUT) -> TeacherForced:
        self._require_two_stage()
        encoded = encode(inst.utterance_ids, self.emb_utt, self.enc2, drop)
        memory = encode(inst.sketch_ids, self.emb_sketch, self.enc3, drop).states
        mapping = inst.lf_to_sketch
        return self._run_gold(
            self.dec2, encoded, self.emb_lf,
            list(inst.lf_ids) + [EOS_ID],
            self.prior(inst.fine_prior), memory,
            lambda y, t: next_input(y, t, mapping, memory, self.emb_lf, self.switch_W, drop), drop,
        )

    def seq2seq_forced(self, inst: PreparedInstance, drop: Dropout = NO_DROPOUT) -> TeacherForced:
        encoded = encode(inst.utterance_ids, self.emb_utt, self.enc1, drop)
        return self._run_gold(
            self.dec_s2s, encoded, self.emb_lf,
            list(inst.lf_ids) + [EOS_ID],
            None, None,
            lambda y, _t: embed(self.emb_lf, y, drop), drop,
        )

    def _require_two_stage(self) -> None:
        if not self.profile.two_stage:
            raise ModelError(f"strategy '{self.strategy}' has no coarse/fine stages")

    # ── Domain heads ───────────────────────────────────
    def head(self, stage: Stage) -> DiscriminatorHead:
        self._require_two_stage()
        return self.disc_c if stage == "coarse" else self.disc_f

    def pooled(self, inst: PreparedInstance, stage: Stage) -> Tensor:
        """Pooled utterance representation u of one stage (no dropout)."""
        enc = self.enc1 if stage == "coarse" else self.enc2
        U = encode(inst.utterance_ids, self.emb_utt, enc).states
        return pool_and_discriminate(U, self.head(stage))[0]

    def _domain_loss(
        self, stage: Stage, encodings: Sequence[Tensor], flags: Sequence[bool], weight: float
    ) -> tuple[Tensor | None, float]:
        """(weighted term to add to the stage loss or None, unweighted value for the log)."""
        adversary = self.profile.coarse_adversary if stage == "coarse" else self.profile.fine_adversary
        head = self.head(stage)
        if adversary is None or weight == 0.0:
            with no_grad():
                probs = [pool_and_discriminate(U, head)[1] for U in encodings]
                value = (domain_confusion_loss if stage == "coarse" else domain_discrimination_loss)(probs, flags)
            return None, value.item()
        if adversary == "reversal":
            probs = [pool_and_discriminate(ops.gradient_reversal(U), head)[1] for U in encodings]
            term = domain_discrimination_loss(probs, flags)
        else:
            probs = [pool_and_discriminate(U, head)[1] for U in encodings]
            loss_fn = domain_confusion_loss if adversary == "confusion" else domain_discrimination_loss
            term = loss_fn(probs, flags)
        return ops.scale(term, weight), term.item()

    # ── Objective ──────────────────────────────────────
    def forward_losses(
        self,
        batch: Sequence[PreparedInstance],
        training: bool = True,
        rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, LossBreakdown]:
        """Batch objective L = L_c + L_f with each term a mean over instances."""
        if not batch:
            raise ModelError("empty batch")
        hp = self.hyperparams
        drop = Dropout(hp.dropout, rng, training)

        if not self.profile.two_stage:
            runs = [self.seq2seq_forced(inst, drop) for inst in batch]
            ce = _mean([r.ce for r in runs])
            value = ce.item()
            return ce, LossBreakdown(fine_ce=value, loss_f=value)

        for inst in batch:
            if inst.sketch is None or inst.alignment is None:
                raise ModelError("training instance lacks a gold sketch and alignment")

        coarse = [self.coarse_forced(inst, drop) for inst in batch]
        coarse_ce = _mean([r.ce for r in coarse])
        coarse_term, coarse_domain = self._domain_loss(
            "coarse", [r.encoded.states for r in coarse], [i.is_source for i in batch], hp.lambda_c
        )
        loss_c = coarse_ce if coarse_term is None else ops.add(coarse_term, coarse_ce)
        breakdown = {"coarse_ce": coarse_ce.item(), "coarse_domain": coarse_domain, "loss_c": loss_c.item()}

        fine_batch = [i for i in batch if not (self.profile.fine_target_only and i.is_source)]
        loss = loss_c
        if fine_batch:
            fine = [self.fine_forced(inst, drop) for inst in fine_batch]
            fine_ce = _mean([r.ce for r in fine])
            fine_term, fine_domain = self._domain_loss(
                "fine", [r.encoded.states for r in fine], [i.is_source for i in fine_batch], hp.lambda_f
            )
            loss_f = fine_ce if fine_term is None else ops.add(fine_term, fine_ce)
            breakdown.update(fine_ce=fine_ce.item(), fine_domain=fine_domain, loss_f=loss_f.item())
            loss = ops.add(loss_c, loss_f)
        return loss, LossBreakdown(**breakdown)

    # ── Decoders for search ────────────────────────────
    def coarse_decoder(self, inst: PreparedInstance, max_len: int) -> "StageDecoder":
        self._require_two_stage()
        encoded = encode(inst.utterance_ids, self.emb_utt, self.enc1)
        return StageDecoder(
            self.dec1, encoded.states, self.prior(inst.coarse_prior), None,
            initial_state(encoded, self.dec1, embed(self.emb_sketch, BOS_ID)),
            lambda y, _t: embed(self.emb_sketch, y), emittable(len(self.vocabs.sketch)), max_len,
        )

    def fine_decoder(
        self,
        inst: PreparedInstance,
        sketch_ids: Sequence[int],
        plan: Sequence[PlanStep] | None,
        free_ids: np.ndarray,
        max_len: int,
        constrained: bool = True,
    ) -> "StageDecoder":
        """Logical-form decoder over a (predicted or gold) sketch.

        With a plan and `constrained`, output position t must be the plan's
        fixed token or, at a free slot, one of `free_ids`; EOS follows the
        last plan step. Without a plan the decoder runs free.
        """
        self._require_two_stage()
        encoded = encode(inst.utterance_ids, self.emb_utt, self.enc2)
        memory = encode(list(sketch_ids), self.emb_sketch, self.enc3).states
        lf_vocab = self.vocabs.logical_form
        mask = emittable(len(lf_vocab))
        if plan is not None:
            plan_ids = [lf_vocab.index(s.token) if s.token is not None else None for s in plan]
            mapping = [s.sketch_index for s in plan]
            if constrained:
                fixed = [np.array([i]) if i is not None else free_ids for i in plan_ids]
                eos = np.array([EOS_ID])

                def mask(t: int) -> np.ndarray:
                    return fixed[t] if t < len(fixed) else eos

                max_len = len(plan) + 1

            def feed(y: int, t: int) -> Tensor:
                on_plan = t < len(plan_ids) and (constrained or plan_ids[t] == y)
                return next_input(
                    y, t, mapping if on_plan else None, memory, self.emb_lf, self.switch_W
                )
        else:
            def feed(y: int, t: int) -> Tensor:
                return embed(self.emb_lf, y)

        return StageDecoder(
            self.dec2, encoded.states, self.prior(inst.fine_prior), memory,
            initial_state(encoded, self.dec2, embed(self.emb_lf, BOS_ID)),
            feed, mask, max_len,
        )

    def seq2seq_decoder(self, inst: PreparedInstance, max_len: int) -> "StageDecoder":
        encoded = encode(inst.utterance_ids, self.emb_utt, self.enc1)
        return StageDecoder(
            self.dec_s2s, encoded.states, None, None,
            initial_state(encoded, self.dec_s2s, embed(self.emb_lf, BOS_ID)),
            lambda y, _t: embed(self.emb_lf, y), emittable(len(self.vocabs.logical_form)), max_len,
        )


def emittable(vocab_size: int) -> Callable[[int], np.ndarray]:
    """Step mask allowing EOS and every non-reserved id."""
    allowed = np.array([EOS_ID, *range(len(RESERVED), vocab_size)], dtype=np.int64)
    return lambda _t: allowed


class StageDecoder:
    """Adapter exposing one decoder to beam search.

    States are DecoderState values; `step` returns log-probabilities with
    disallowed tokens at -inf and the advanced state awaiting its input.
    """

    eos_id = EOS_ID

    def __init__(
        self,
        params: DecoderParams,
        U: Tensor,
        q: Tensor | None,
        memory: Tensor | None,
        start: DecoderState,
        feed: Callable[[int, int], Tensor],
        mask: Callable[[int], np.ndarray] | None,
        max_len: int,
    ):
        self.params = params
        self.U = U
        self.q = q
        self.memory = memory
        self.start = start
        self.feed = feed
        self.mask = mask
        self.max_len = max_len

    def initial_state(self) -> DecoderState:
        return self.start

    def step(self, state: DecoderState) -> tuple[np.ndarray, DecoderState]:
        out = decode_step(self.params, state, self.U, self.q, self.memory)
        with np.errstate(divide="ignore"):
            log_probs = np.log(out.dist.value[0])
        if self.mask is not None:
            allowed = self.mask(state.t)
            masked = np.full_like(log_probs, -np.inf)
            masked[allowed] = log_probs[allowed]
            log_probs = masked
        return log_probs, out.state

    def advance(self, pending: DecoderState, token: int) -> DecoderState:
        return pending.feed(self.feed(token, pending.t - 1))


def _mean(values: Sequence[Tensor]) -> Tensor:
    total = values[0]
    for v in values[1:]:
        total = ops.add(total, v)
    return ops.scale(total, 1.0 / len(values))
