import numpy as np
import pytest

from damp.ai.layers import (
    DiscriminatorHead,
    decode_step,
    embed,
    encode,
    initial_state,
    next_input,
    pool_and_discriminate,
    prior_attention,
)
from damp.ai.losses import domain_confusion_loss, domain_discrimination_loss
from damp.ai.orchestrator import ParseOrchestrator
from damp.ai.parser import StrategyProfile, is_fine_parameter, profile_for
from damp.core.exceptions import DecodingError, ModelError, ShapeError
from damp.numerics.gradcheck import grad_check
from damp.numerics.optim import rmsprop_step
from damp.numerics.tensor import Tensor, constant
from damp.schemas.model import Hyperparams
from damp.schemas.train import STRATEGIES
from damp.services.sketch import decoding_plan, induce_sketch
from damp.services.vocab import BOS_ID, EOS_ID, PAD_ID, RESERVED, UNK_ID
from damp.tasks.training import build_orchestrator


def _mixed_batch(orchestrator, dataset):
    return orchestrator.preprocessor.prepare_all([dataset.source_train[0], dataset.target_train[0]])


def test_full_objective_gradient_check(toy_config, dataset):
    orchestrator = build_orchestrator(toy_config, dataset)
    parser = orchestrator.parser
    batch = _mixed_batch(orchestrator, dataset)

    def loss():
        return parser.forward_losses(batch, training=False)[0]

    assert grad_check(loss, parser.store, max_entries=3, floor=1e-3) <= 1e-4


def test_confusion_is_negated_discrimination():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        probs = [constant(p) for p in rng.uniform(0.01, 0.99, n)]
        flags = [bool(f) for f in rng.integers(0, 2, n)]
        confusion = domain_confusion_loss(probs, flags).item()
        assert confusion == -domain_discrimination_loss(probs, flags).item()
        assert confusion <= 0.0


def test_all_ones_prior_is_neutral():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n, w = int(rng.integers(1, 12)), 6
        U = Tensor(rng.normal(size=(n, w)))
        d = Tensor(rng.normal(size=(1, w)))
        plain = prior_attention(U, d, None)
        neutral = prior_attention(U, d, Tensor(np.ones((1, n))))
        np.testing.assert_array_equal(neutral.alpha_pri.value, plain.alpha.value)
        np.testing.assert_array_equal(neutral.prior_context.value, plain.context.value)


def test_prior_shifts_attention_towards_relevant_words():
    U = Tensor(np.eye(3))
    d = Tensor(np.array([[1.0, 1.0, 1.0]]))
    attention = prior_attention(U, d, Tensor(np.array([[1.0, 60.0, 1.0]])))
    assert np.argmax(attention.alpha_pri.value) == 1
    np.testing.assert_allclose(attention.alpha.value, np.full((1, 3), 1 / 3))


def test_decoder_distributions_are_on_the_simplex(toy_config, dataset):
    orchestrator = build_orchestrator(toy_config, dataset)
    parser = orchestrator.parser
    prep = _mixed_batch(orchestrator, dataset)[1]
    encoded = encode(prep.utterance_ids, parser.emb_utt, parser.enc1)
    state = initial_state(encoded, parser.dec1, embed(parser.emb_sketch, BOS_ID))
    for token in prep.sketch_ids:
        out = decode_step(parser.dec1, state, encoded.states, parser.prior(prep.coarse_prior))
        assert out.dist.shape == (1, len(parser.vocabs.sketch))
        assert np.all(out.dist.value >= 0.0)
        assert out.dist.value.sum() == pytest.approx(1.0, abs=1e-12)
        assert out.attention.alpha.value.sum() == pytest.approx(1.0, abs=1e-12)
        state = out.state.feed(embed(parser.emb_sketch, token))


def test_constrained_fine_decoder_masks_tokens(toy_config, dataset):
    orchestrator = build_orchestrator(toy_config, dataset)
    parser = orchestrator.parser
    prep = orchestrator.preprocessor.prepare(dataset.target_train[0])
    plan = decoding_plan(prep.sketch.tokens)
    decoder = parser.fine_decoder(prep, prep.sketch_ids, plan, orchestrator.preprocessor.specific_lf_ids(), 50)
    assert decoder.max_len == len(plan) + 1
    log_probs, _ = decoder.step(decoder.initial_state())
    allowed = np.flatnonzero(np.isfinite(log_probs))
    assert plan[0].token is not None
    assert allowed.tolist() == [parser.vocabs.logical_form.index(plan[0].token)]


def test_strategy_profiles():
    hp = Hyperparams()
    assert profile_for("damp", hp) == StrategyProfile()
    assert profile_for("damp_no_att", hp).use_prior is False
    assert profile_for("damp_no_dis", hp).coarse_adversary is None
    assert profile_for("damp_no_dis", hp).fine_adversary is None
    assert profile_for("seq2seq", hp).two_stage is False
    assert profile_for("param_share", hp).fine_target_only is True
    assert profile_for("grad_reversal", hp).coarse_adversary == "reversal"
    reversed_hp = Hyperparams(reverse_grad_discriminator=True)
    assert profile_for("damp", reversed_hp).coarse_adversary == "reversal"
    for strategy in STRATEGIES:
        profile_for(strategy, hp)
    with pytest.raises(ModelError):
        profile_for("unknown", hp)


def test_zero_lambdas_leave_cross_entropy_only(toy_config, toy_hp, dataset):
    config = toy_config.model_copy(update={"hyperparams": toy_hp.model_copy(update={"lambda_c": 0.0, "lambda_f": 0.0})})
    orchestrator = build_orchestrator(config, dataset)
    _, breakdown = orchestrator.parser.forward_losses(_mixed_batch(orchestrator, dataset), training=False)
    assert breakdown.loss_c == breakdown.coarse_ce
    assert breakdown.loss_f == breakdown.fine_ce
    assert breakdown.coarse_domain <= 0.0
    assert breakdown.fine_domain >= 0.0


def test_param_share_source_batch_leaves_fine_parameters(toy_config, dataset):
    config = toy_config.model_copy(update={"strategy": "param_share"})
    orchestrator = build_orchestrator(config, dataset)
    parser = orchestrator.parser
    fine = parser.fine_parameter_names()
    assert fine and all(is_fine_parameter(name) for name in fine)
    before = {name: parser.store[name].value.copy() for name in fine}
    coarse_before = parser.store["dec1.out.W"].value.copy()

    batch = orchestrator.preprocessor.prepare_all(dataset.source_train[:3])
    loss, breakdown = parser.forward_losses(batch, training=False)
    loss.backward()
    rmsprop_step(parser.store, lr=0.1, weight_decay=0.01)

    for name in fine:
        np.testing.assert_array_equal(parser.store[name].value, before[name])
    assert not np.array_equal(parser.store["dec1.out.W"].value, coarse_before)
    assert breakdown.loss_f == 0.0


def test_seq2seq_has_no_stages(toy_config, dataset):
    orchestrator = build_orchestrator(toy_config.model_copy(update={"strategy": "seq2seq"}), dataset)
    prep = orchestrator.preprocessor.prepare(dataset.target_train[0])
    with pytest.raises(ModelError):
        orchestrator.parser.coarse_forced(prep)
    loss, breakdown = orchestrator.parser.forward_losses([prep], training=False)
    assert breakdown.loss_c == 0.0 and breakdown.loss_f == loss.item()


def test_checkpoint_bundle_round_trip(toy_config, dataset, tmp_path):
    orchestrator = build_orchestrator(toy_config, dataset)
    path = orchestrator.save(tmp_path / "model.ckpt", epoch=3)
    loaded = ParseOrchestrator.load(path)
    for name, tensor in orchestrator.parser.store.items():
        np.testing.assert_array_equal(loaded.parser.store[name].value, tensor.value)
    utterance = dataset.target_train[0].utterance
    assert loaded.parse(utterance) == orchestrator.parse(utterance)
    assert loaded.max_lf_len == orchestrator.max_lf_len


CALENDAR = (
    "listValue ( countComparative ( getProperty ( singleton en.meeting ) ( string !type ) ) "
    "( string attendee ) ( string >= ) ( number 2 ) )"
).split()


def _head(w_ae, w_d, b_d):
    return DiscriminatorHead(Tensor(np.array(w_ae, dtype=float)), Tensor(np.array(w_d, dtype=float)), Tensor([[b_d]]))


def test_pool_and_discriminate_worked_examples():
    rng = np.random.default_rng(5)
    U = rng.normal(size=(3, 4))

    _, p = pool_and_discriminate(Tensor(U), _head(rng.normal(size=(4, 1)), np.zeros((4, 1)), 0.0))
    assert p.item() == 0.5

    row = rng.normal(size=(1, 4))
    u, _ = pool_and_discriminate(Tensor(row), _head(rng.normal(size=(4, 1)), np.ones((4, 1)), 0.0))
    np.testing.assert_allclose(u.value, row, rtol=1e-15)

    w_ae = [[0.5], [-1.0], [0.25], [2.0]]
    w_d = [[1.0], [0.0], [-1.0], [0.5]]
    u, p = pool_and_discriminate(Tensor(U), _head(w_ae, w_d, 0.1))
    scores = U @ np.array(w_ae)[:, 0]
    alpha = np.exp(scores - scores.max()) / np.exp(scores - scores.max()).sum()
    pooled = alpha @ U
    expected = 1.0 / (1.0 + np.exp(-(pooled @ np.array(w_d)[:, 0] + 0.1)))
    np.testing.assert_allclose(u.value[0], pooled, rtol=1e-12)
    assert p.item() == pytest.approx(expected, rel=1e-12)

    with pytest.raises(ShapeError):
        pool_and_discriminate(Tensor(np.ones((2, 3))), _head(w_ae, w_d, 0.0))


def test_next_input_switches_between_sketch_rows_and_embeddings():
    specific = {"en.meeting", "attendee", "2"}
    sketch, alignment = induce_sketch(CALENDAR, lambda tok: "specific" if tok in specific else "general")
    mapping = alignment.lf_to_sketch()
    rng = np.random.default_rng(6)
    memory = Tensor(rng.normal(size=(len(sketch.tokens), 4)))
    table = Tensor(rng.normal(size=(len(CALENDAR) + 1, 4)))

    embedded, switches = [], 0
    for position, token in enumerate(CALENDAR):
        token_id = position + 1
        fed = next_input(token_id, position, mapping, memory, table)
        switches += 1
        k = mapping[position]
        if k is None:
            np.testing.assert_array_equal(fed.value[0], table.value[token_id])
            embedded.append(token)
        else:
            assert sketch.tokens[k].split("@")[0] == token
            np.testing.assert_array_equal(fed.value[0], memory.value[k])
    assert switches == len(CALENDAR)
    assert embedded == ["en.meeting", "attendee", "2"]

    with pytest.raises(DecodingError, match="exhausted"):
        next_input(1, len(CALENDAR), mapping, memory, table)
    np.testing.assert_array_equal(next_input(3, 0, None, memory, table).value[0], table.value[3])

    projection = Tensor(rng.normal(size=(4, 4)))
    projected = next_input(1, 0, mapping, memory, table, switch_W=projection)
    np.testing.assert_allclose(projected.value, memory.value[mapping[0]][None, :] @ projection.value)


def test_sketch_without_placeholders_is_copied(toy_config, dataset, monkeypatch):
    orchestrator = build_orchestrator(toy_config, dataset)
    prep = orchestrator.preprocessor.prepare(dataset.target_train[0])
    sketch = ("count", "(", "getProperty", ")")
    assert not any(step.free for step in decoding_plan(sketch))
    for beam in (1, 3):
        lf, fallback, _ = orchestrator.decode_logical_form(prep, sketch, beam)
        assert lf == sketch and not fallback

    monkeypatch.setattr(orchestrator, "decode_sketch", lambda p, beam: (sketch, 0.0))
    result = orchestrator.parse_prepared(prep)
    assert result.logical_form == sketch
    assert not result.fallback


@pytest.mark.parametrize("sketch", [(")", "count", "("), ()])
def test_malformed_sketch_falls_back_to_free_decoding(sketch, toy_config, dataset, monkeypatch):
    orchestrator = build_orchestrator(toy_config, dataset)
    prep = orchestrator.preprocessor.prepare(dataset.target_train[0])
    monkeypatch.setattr(orchestrator, "decode_sketch", lambda p, beam: (sketch, 0.0))
    result = orchestrator.parse_prepared(prep, beam_size=2)
    assert result.fallback
    assert result.sketch == sketch
    assert len(result.logical_form) <= orchestrator.max_lf_len
    assert not set(result.logical_form) & set(RESERVED)


def test_decoders_never_emit_reserved_ids(toy_config, dataset):
    orchestrator = build_orchestrator(toy_config, dataset)
    parser = orchestrator.parser
    prep = orchestrator.preprocessor.prepare(dataset.target_train[0])
    free_ids = orchestrator.preprocessor.specific_lf_ids()
    decoders = [
        parser.coarse_decoder(prep, 10),
        parser.fine_decoder(prep, prep.sketch_ids, None, free_ids, 10),
    ]
    seq2seq = build_orchestrator(toy_config.model_copy(update={"strategy": "seq2seq"}), dataset)
    decoders.append(seq2seq.parser.seq2seq_decoder(seq2seq.preprocessor.prepare(dataset.target_train[0]), 10))
    for decoder in decoders:
        state = decoder.initial_state()
        for _ in range(3):
            log_probs, pending = decoder.step(state)
            assert np.all(np.isneginf(log_probs[[PAD_ID, BOS_ID, UNK_ID]]))
            assert np.isfinite(log_probs[EOS_ID])
            assert np.all(np.isfinite(log_probs[len(RESERVED):]))
            state = decoder.advance(pending, len(RESERVED))
