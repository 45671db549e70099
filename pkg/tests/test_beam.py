import itertools

import numpy as np
import pytest

from damp.ai.beam import beam_search, greedy


class TableDecoder:
    """Fixed seeded log-probabilities per prefix; states are the prefixes themselves."""

    def __init__(self, vocab_size: int, eos_id: int, seed: int = 0):
        self.vocab_size = vocab_size
        self.eos_id = eos_id
        self.seed = seed

    def initial_state(self):
        return ()

    def step(self, state):
        rng = np.random.default_rng([self.seed, len(state), *state])
        logits = rng.normal(size=self.vocab_size)
        return logits - np.log(np.exp(logits).sum()), state

    def advance(self, pending, token):
        return pending + (token,)

    def score(self, tokens):
        total, state = 0.0, ()
        for token in tokens:
            log_probs, _ = self.step(state)
            total += log_probs[token]
            state = state + (token,)
        return total


def test_wide_beam_finds_the_exact_best_sequence():
    for seed in range(5):
        # eos_id outside the vocabulary: every hypothesis runs to max_len
        decoder = TableDecoder(vocab_size=3, eos_id=99, seed=seed)
        best = beam_search(decoder, beam_size=27, max_len=3)
        brute = max(itertools.product(range(3), repeat=3), key=decoder.score)
        assert best.tokens == brute
        assert best.score == pytest.approx(decoder.score(brute), abs=1e-12)
        assert not best.finished


def test_beam_of_one_equals_greedy():
    for seed in range(20):
        decoder = TableDecoder(vocab_size=4, eos_id=0, seed=seed)
        beam = beam_search(decoder, beam_size=1, max_len=6)
        plain = greedy(decoder, max_len=6)
        assert beam.tokens == plain.tokens
        assert beam.score == pytest.approx(plain.score, abs=1e-12)


def test_finished_hypothesis_stops_search():
    class StopFirst(TableDecoder):
        def step(self, state):
            log_probs = np.log(np.array([0.9, 0.05, 0.05]))
            return log_probs, state

    best = beam_search(StopFirst(3, eos_id=0), beam_size=3, max_len=10)
    assert best.tokens == ()
    assert best.finished
    assert best.score == pytest.approx(np.log(0.9))


def test_ties_prefer_smaller_token_sequence():
    class Flat(TableDecoder):
        def step(self, state):
            return np.full(3, np.log(1 / 3)), state

    best = beam_search(Flat(3, eos_id=99), beam_size=2, max_len=2)
    assert best.tokens == (0, 0)
    assert greedy(Flat(3, eos_id=99), max_len=2).tokens == (0, 0)


def test_masked_tokens_are_never_chosen():
    class Masked(TableDecoder):
        def step(self, state):
            log_probs, state = super().step(state)
            log_probs[[0, 1]] = -np.inf
            return log_probs, state

    decoder = Masked(4, eos_id=99, seed=3)
    best = beam_search(decoder, beam_size=4, max_len=3)
    assert all(t >= 2 for t in best.tokens)
    assert np.isfinite(best.score)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        beam_search(TableDecoder(3, 0), beam_size=0, max_len=3)


def test_wider_beam_never_scores_below_greedy():
    for seed in range(1000):
        decoder = TableDecoder(vocab_size=4, eos_id=seed % 4, seed=seed)
        plain = greedy(decoder, max_len=5)
        best = beam_search(decoder, beam_size=3, max_len=5)
        if plain.finished:
            assert best.finished
            assert best.score >= plain.score - 1e-12
        elif not best.finished:
            assert best.score >= plain.score - 1e-12
