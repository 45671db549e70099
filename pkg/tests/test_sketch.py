import numpy as np
import pytest

from damp.core.exceptions import AlignmentError
from damp.services.sketch import (
    Sketch,
    TokenShareTable,
    align,
    classify_token,
    compute_token_shares,
    decoding_plan,
    em_rate,
    exact_match,
    induce_sketch,
    is_well_formed,
    reconstruct,
    slot_tokens,
    write_sketch_dump,
)
from damp.core.io import read_tsv
from tests.conftest import make_domains, make_instance

CALENDAR = (
    "listValue ( countComparative ( getProperty ( singleton en.meeting ) ( string !type ) ) "
    "( string attendee ) ( string >= ) ( number 2 ) )"
).split()
CALENDAR_SKETCH = (
    "listValue ( countComparative ( getProperty ( singleton@1 ) ( string !type ) ) "
    "( string@1 ) ( string >= ) ( number@1 ) )"
).split()


def _classifier(specific):
    return lambda tok: "specific" if tok in specific else "general"


def _table(counts: dict[str, int], k: int) -> TokenShareTable:
    return TokenShareTable({tok: frozenset(range(n)) for tok, n in counts.items()}, k)


def test_calendar_sketch():
    sketch, alignment = induce_sketch(CALENDAR, _classifier({"en.meeting", "attendee", "2"}))
    assert list(sketch.tokens) == CALENDAR_SKETCH
    assert alignment.lf_length == len(CALENDAR)
    assert slot_tokens(CALENDAR, alignment) == ["en.meeting", "attendee", "2"]


def test_all_general_is_identity():
    lf = "( listValue ( getProperty x ) )".split()
    sketch, alignment = induce_sketch(lf, _classifier(set()))
    assert list(sketch.tokens) == lf
    assert sketch.placeholders == []
    assert alignment.spans == tuple((i,) for i in range(len(lf)))


def test_head_collapse_and_hole():
    sketch, alignment = induce_sketch("( foo a b )".split(), _classifier({"a", "b"}))
    assert sketch.tokens == ("(", "foo@2", ")")
    assert alignment.spans[1] == (1, 2, 3)
    sketch, alignment = induce_sketch("( a b )".split(), _classifier({"a", "b"}))
    assert sketch.tokens == ("(", "hole@2", ")")
    assert alignment.anchored == (True, False, True)
    assert sketch.slot_count == 2


def test_share_table_matches_brute_force(corpora):
    source = {d: v for d, v in corpora.items() if d.name != "recipes"}
    table = compute_token_shares(source)
    ordered = sorted(source, key=lambda d: d.id)
    expected: dict[str, set[int]] = {}
    for index, domain in enumerate(ordered):
        for token in {t for inst in source[domain] for t in inst.logical_form}:
            expected.setdefault(token, set()).add(index)
    assert {t: set(s) for t, s in table.shares.items()} == expected
    assert table.num_source_domains == 2
    assert table.general_tokens() == frozenset({"(", ")", "count", "getProperty", "listValue", "filter", "string", "="})


def test_token_only_in_one_domain():
    domains = make_domains("calendar", "housing")
    table = compute_token_shares({
        domains[0]: [make_instance(0, "x", "( attendee )")],
        domains[1]: [make_instance(1, "y", "( unit )")],
    })
    assert table.shares["attendee"] == frozenset({0})


def test_classification_threshold():
    assert classify_token("t", _table({"t": 4}, 7)) == "general"
    assert classify_token("t", _table({"t": 3}, 7)) == "specific"
    assert classify_token("(", _table({}, 7)) == "general"
    assert classify_token("unseen", _table({}, 7)) == "specific"
    for n in (1, 2, 3, 5):
        assert classify_token("t", _table({"t": n}, 2 * n)) == "specific"
        assert classify_token("t", _table({"t": n + 1}, 2 * n)) == "general"


def test_align_round_trip_and_errors():
    lf = "( foo a b )".split()
    sketch, alignment = induce_sketch(lf, _classifier({"a", "b"}))
    assert align(lf, sketch) == alignment
    assert align(CALENDAR, CALENDAR_SKETCH) == induce_sketch(CALENDAR, _classifier({"en.meeting", "attendee", "2"}))[1]
    with pytest.raises(AlignmentError) as exc:
        align("( foo a )".split(), Sketch(("(", "bar@1", ")")))
    assert exc.value.position == 1
    with pytest.raises(AlignmentError):
        align("( foo a )".split(), ["(", "foo@1"])
    with pytest.raises(AlignmentError):
        align("( foo )".split(), ["(", "foo@2", ")"])


def test_reconstruct_slot_mismatch():
    with pytest.raises(ValueError):
        reconstruct(("(", "foo@2", ")"), ["a"])
    with pytest.raises(ValueError):
        reconstruct(("(", "foo@1", ")"), ["a", "b"])


def _random_form(rng: np.random.Generator, vocab: list[str]) -> list[str]:
    tokens: list[str] = []
    depth = 0
    for _ in range(int(rng.integers(1, 16))):
        roll = rng.random()
        if roll < 0.2:
            tokens.append("(")
            depth += 1
        elif roll < 0.35 and depth:
            tokens.append(")")
            depth -= 1
        else:
            tokens.append(vocab[int(rng.integers(len(vocab)))])
    return tokens + [")"] * depth


def test_reconstruction_round_trip_property():
    rng = np.random.default_rng(0)
    vocab = [f"g{i}" for i in range(5)] + [f"s{i}" for i in range(5)]
    classify = lambda tok: "specific" if tok.startswith("s") else "general"  # noqa: E731
    for _ in range(10_000):
        lf = _random_form(rng, vocab)
        sketch, alignment = induce_sketch(lf, classify)
        assert reconstruct(sketch, slot_tokens(lf, alignment)) == lf
        assert align(lf, sketch) == alignment
        assert not any(tok.startswith("s") for tok in sketch.tokens)
        covered = sorted(p for span in alignment.spans for p in span)
        assert covered == list(range(len(lf)))
        assert is_well_formed(sketch.tokens) == is_well_formed(lf)


def test_decoding_plan():
    plan = decoding_plan(("(", "foo@2", "hole@1", ")"))
    assert [(p.token, p.sketch_index) for p in plan] == [
        ("(", 0), ("foo", 1), (None, None), (None, None), (None, None), (")", 3),
    ]
    assert sum(p.free for p in plan) == 3


def test_well_formed():
    assert is_well_formed(["(", "x", ")"])
    assert not is_well_formed([])
    assert not is_well_formed([")", "("])
    assert not is_well_formed(["(", "x"])


def test_exact_match_and_rate():
    assert exact_match(["a", "b"], ("a", "b"))
    assert not exact_match(["a", "b"], ["a", "c"])
    assert em_rate([(["a"], ["a"]), (["b"], ["b"]), (["a"], ["b"])]) == pytest.approx(2 / 3)
    assert em_rate([]) == 0.0


def test_sketch_dump(tmp_path):
    sketch, _ = induce_sketch("( foo a )".split(), _classifier({"a"}))
    count = write_sketch_dump(tmp_path / "s.tsv", [("toy", ("(", "foo", "a", ")"), sketch)])
    assert count == 1
    assert read_tsv(tmp_path / "s.tsv") == [["toy", "( foo a )", "( foo@1 )"]]
