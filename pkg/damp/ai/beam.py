"""
Beam search over any step-wise decoder.

A decoder provides `eos_id`, `initial_state()`, `step(state) -> (log_probs,
pending)` and `advance(pending, token) -> state`. Scores are summed log
probabilities without length normalisation; ties go to the lexicographically
smaller token sequence.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np


class StepDecoder(Protocol):
    eos_id: int

    def initial_state(self) -> Any: ...

    def step(self, state: Any) -> tuple[np.ndarray, Any]: ...

    def advance(self, pending: Any, token: int) -> Any: ...


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]  # without EOS
    score: float
    finished: bool = False
    state: Any = field(default=None, compare=False, repr=False)

    @property
    def key(self) -> tuple[float, tuple[int, ...]]:
        return -self.score, self.tokens


def _top_tokens(log_probs: np.ndarray, limit: int) -> list[int]:
    order = np.lexsort((np.arange(log_probs.shape[0]), -log_probs))
    return [int(i) for i in order[:limit] if np.isfinite(log_probs[i])]


def _ranked(pool: list[Hypothesis]) -> Hypothesis:
    return min(pool, key=lambda h: h.key)


def beam_search(decoder: StepDecoder, beam_size: int, max_len: int) -> Hypothesis:
    """Completed hypotheses are kept apart from the `beam_size` live slots.

    The greedy path is always a candidate, so a wider beam never returns a
    worse result than `greedy`.
    """
    if beam_size < 1 or max_len < 1:
        raise ValueError("beam_size and max_len must be at least 1")
    baseline = greedy(decoder, max_len)
    if beam_size == 1:
        return baseline
    alive = [Hypothesis((), 0.0, state=decoder.initial_state())]
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        candidates: list[tuple[float, tuple[int, ...], Any, bool]] = []
        for hyp in alive:
            log_probs, pending = decoder.step(hyp.state)
            for token in _top_tokens(log_probs, beam_size):
                is_eos = token == decoder.eos_id
                tokens = hyp.tokens if is_eos else hyp.tokens + (token,)
                candidates.append((hyp.score + float(log_probs[token]), tokens, pending, is_eos))
        candidates.sort(key=lambda c: (-c[0], c[1], c[3]))
        alive = []
        for score, tokens, pending, is_eos in candidates:
            if is_eos:
                finished.append(Hypothesis(tokens, score, finished=True))
            elif len(alive) < beam_size:
                alive.append(Hypothesis(tokens, score, state=decoder.advance(pending, tokens[-1])))
        if not alive:
            break
        # scores only decrease, so no alive hypothesis can overtake the best finished one
        if finished and max(f.score for f in finished) >= alive[0].score:
            break
    if baseline.finished:
        finished.append(baseline)
    if finished:
        return _ranked(finished)
    pool = list(alive)
    if np.isfinite(baseline.score):
        pool.append(baseline)
    if not pool:
        return Hypothesis((), float("-inf"))
    return _ranked(pool)


def greedy(decoder: StepDecoder, max_len: int) -> Hypothesis:
    state = decoder.initial_state()
    tokens: list[int] = []
    score = 0.0
    for _ in range(max_len):
        log_probs, pending = decoder.step(state)
        token = int(np.argmax(log_probs))
        if not np.isfinite(log_probs[token]):
            return Hypothesis(tuple(tokens), float("-inf"))
        score += float(log_probs[token])
        if token == decoder.eos_id:
            return Hypothesis(tuple(tokens), score, finished=True)
        tokens.append(token)
        state = decoder.advance(pending, token)
    return Hypothesis(tuple(tokens), score)
