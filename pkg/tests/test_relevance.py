import numpy as np
import pytest

from damp.core.exceptions import RelevanceError
from damp.core.io import read_tsv
from damp.services.relevance import (
    PriorVector,
    RelevanceScorer,
    build_prior,
    cosine,
    domain_relevant_positions,
    query_vector,
    write_relevance_dump,
)

VECTORS = {
    "meeting": np.array([1.0, 0.0, 0.0]),
    "calendar": np.array([0.9, 0.1, 0.0]),
    "show": np.array([0.0, 1.0, 0.0]),
    "me": np.array([0.0, 0.0, 1.0]),
    "event": np.array([0.8, 0.0, 0.2]),
}


def test_cosine():
    assert cosine([1.0, 0.0], [2.0, 0.0]) == pytest.approx(1.0)
    assert cosine([1.0, 0.0], [0.0, 3.0]) == 0.0
    assert cosine([1.0, 0.0], [-1.0, 0.0]) == pytest.approx(-1.0)
    assert cosine([0.0, 0.0], [1.0, 0.0]) == 0.0
    with pytest.raises(ValueError):
        cosine([1.0], [1.0, 2.0])


def test_query_vector_is_mean_and_requires_a_vector():
    np.testing.assert_allclose(query_vector("x", ["show", "me", "absent"], VECTORS), [0.0, 0.5, 0.5])
    with pytest.raises(RelevanceError, match="domain 'blocks'"):
        query_vector("blocks", ["blocks"], VECTORS)


def test_top_k_positions():
    utterance = ["show", "me", "meeting", "event"]
    assert domain_relevant_positions(utterance, ["calendar"], VECTORS, 2) == frozenset({2, 3})
    assert domain_relevant_positions(utterance, ["calendar"], VECTORS, 0) == frozenset()
    assert domain_relevant_positions(utterance, ["calendar"], VECTORS, 10) == frozenset(range(4))


def test_ties_go_to_leftmost_position():
    utterance = ["unknown", "meeting", "other", "meeting"]
    assert domain_relevant_positions(utterance, ["calendar"], VECTORS, 1) == frozenset({1})
    # words without a vector score 0 and tie with each other
    assert domain_relevant_positions(["a", "b", "c"], ["calendar"], VECTORS, 2) == frozenset({0, 1})


def test_build_prior_values():
    coarse = build_prior({1}, 3, "coarse", r_c=0.25, r_f=0.5)
    np.testing.assert_array_equal(coarse.q, [0.25, 1.0, 0.25])
    fine = build_prior({1}, 3, "fine", r_c=0.25, r_f=0.5)
    np.testing.assert_array_equal(fine.q, [1.0, 0.5, 1.0])
    assert len(fine) == 3 and fine.stage == "fine"
    np.testing.assert_array_equal(build_prior(set(), 2, "coarse", 0.1, 0.1).q, [0.1, 0.1])
    np.testing.assert_array_equal(PriorVector.ones(2, "fine").q, [1.0, 1.0])
    with pytest.raises(ValueError, match="outside"):
        build_prior({3}, 3, "coarse", 0.5, 0.5)


def test_lexical_scorer_marks_literal_query_words():
    scorer = RelevanceScorer.lexical({"calendar": ("meeting",)}, ["calendar", "housing"], k=1)
    assert scorer.query("housing") == ("housing",)
    assert scorer.relevant_positions(["show", "meeting"], "calendar") == frozenset({1})
    assert scorer.relevant_positions(["find", "housing", "unit"], "housing") == frozenset({1})
    scorer.check_domains(["calendar", "housing"])


def test_scorer_caches_and_checks_domains():
    scorer = RelevanceScorer(dict(VECTORS), {"calendar": ("calendar",)}, k=1)
    first = scorer.relevant_positions(("show", "event"), "calendar")
    assert scorer.relevant_positions(("show", "event"), "calendar") is first
    with pytest.raises(RelevanceError):
        scorer.check_domains(["calendar", "recipes"])


def test_from_table_round_trip():
    scorer = RelevanceScorer(dict(VECTORS), {}, k=2)
    words, matrix = scorer.table()
    rebuilt = RelevanceScorer.from_table(words, matrix, {}, 2)
    assert rebuilt.relevant_positions(["me", "calendar"], "meeting") == scorer.relevant_positions(
        ["me", "calendar"], "meeting"
    )
    with pytest.raises(ValueError):
        RelevanceScorer.from_table(words[:-1], matrix, {}, 2)


def test_relevance_dump(tmp_path):
    write_relevance_dump(tmp_path / "r.tsv", [("calendar", ["show", "meeting"], {1})])
    assert read_tsv(tmp_path / "r.tsv") == [["calendar", "show meeting", "1"]]
