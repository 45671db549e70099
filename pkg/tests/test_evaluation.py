import json

import numpy as np
import pytest

from damp.core.exceptions import CheckpointError, DataError, ModelError
from damp.core.io import read_tsv
from damp.schemas.corpus import AdaptationDataset
from damp.schemas.eval import Prediction, StageSeparation
from damp.services import evaluation
from damp.services.evaluation import (
    align_domains,
    calinski_harabasz,
    compare_stage_separation,
    dump_attention,
    dump_representations,
    evaluate,
    evaluate_prepared,
    report_from_predictions,
)
from damp.tasks.training import build_orchestrator
from tests.conftest import make_domains, make_instance


def _reference_ch(X, labels):
    labels = np.asarray(labels)
    n, centre = X.shape[0], X.mean(axis=0)
    groups = [X[labels == c] for c in np.unique(labels)]
    k = len(groups)
    B = sum(len(g) * np.outer(g.mean(0) - centre, g.mean(0) - centre) for g in groups)
    W = sum((g - g.mean(0)).T @ (g - g.mean(0)) for g in groups)
    return (np.trace(B) / (k - 1)) / (np.trace(W) / (n - k))


def test_calinski_harabasz_small_case():
    assert calinski_harabasz(np.array([0.0, 1.0, 4.0, 5.0]), ["a", "a", "b", "b"]) == pytest.approx(32.0)


def test_calinski_harabasz_matches_scatter_formula_and_invariances():
    rng = np.random.default_rng(0)
    for _ in range(20):
        X = rng.normal(size=(30, 5))
        labels = rng.integers(0, 3, 30).tolist()
        labels[:3] = [0, 1, 2]
        value = calinski_harabasz(X, labels)
        assert abs(value - _reference_ch(X, labels)) <= 1e-9 * max(1.0, value)
        assert calinski_harabasz(X + 7.5, labels) == pytest.approx(value, rel=1e-9)
        assert calinski_harabasz(X * 3.0, labels) == pytest.approx(value, rel=1e-9)


def test_calinski_harabasz_degenerate_inputs():
    with pytest.raises(DataError, match="at least 2 clusters"):
        calinski_harabasz(np.ones((4, 2)), ["a"] * 4)
    with pytest.raises(DataError, match="more points"):
        calinski_harabasz(np.eye(2), ["a", "b"])
    with pytest.raises(DataError, match="undefined"):
        calinski_harabasz(np.array([[0.0], [0.0], [1.0], [1.0]]), ["a", "a", "b", "b"])
    with pytest.raises(DataError, match="one label"):
        calinski_harabasz(np.eye(3), ["a", "b"])


def test_report_scores_per_domain():
    predictions = [
        Prediction(domain="recipes", utterance=("x",), predicted_sketch=("a",), predicted_lf=("a",),
                   oracle_lf=("a",), gold_sketch=("a",), gold_lf=("a",)),
        Prediction(domain="recipes", utterance=("y",), predicted_sketch=("a",), predicted_lf=("b",),
                   oracle_lf=("c",), gold_sketch=("a",), gold_lf=("c",), fallback=True),
    ]
    report = report_from_predictions(predictions)
    assert (report.sketch_em, report.lf_oracle_em, report.lf_em) == (1.0, 1.0, 0.5)
    assert report.fallbacks == 1
    assert [d.domain for d in report.per_domain] == ["recipes"]
    assert "recipes" in report.render()
    assert predictions[1].to_row()[-2:] == ["0", "1"]


def test_evaluate_writes_predictions(toy_config, dataset, tmp_path):
    orchestrator = build_orchestrator(toy_config, dataset)
    out = tmp_path / "predictions.tsv"
    report = evaluate(dataset, orchestrator, predictions_out=out)
    assert report.count == len(dataset.target_dev)
    rows = read_tsv(out)
    assert len(rows) == report.count
    assert all(len(r) == len(Prediction.COLUMNS) for r in rows)

    path = orchestrator.save(tmp_path / "model.ckpt")
    assert evaluate(dataset, path, beam_size=1).count == report.count


def test_threaded_evaluation_matches_sequential(toy_config, dataset, monkeypatch):
    orchestrator = build_orchestrator(toy_config, dataset)
    prepared = orchestrator.preprocessor.prepare_all(dataset.source_dev + dataset.target_dev)
    sequential_report, sequential = evaluate_prepared(orchestrator, prepared, beam_size=2, workers=1)

    pools = []
    real_pool = evaluation.ThreadPoolExecutor

    def recording_pool(max_workers):
        pools.append(max_workers)
        return real_pool(max_workers=max_workers)

    monkeypatch.setattr(evaluation, "ThreadPoolExecutor", recording_pool)
    threaded_report, threaded = evaluate_prepared(orchestrator, prepared, beam_size=2, workers=3)
    assert pools == [3]
    assert threaded == sequential
    assert threaded_report == sequential_report
    assert evaluate(dataset, orchestrator, workers=4).count == len(dataset.target_dev)


def test_align_domains_rejects_unknown_domain(toy_config, dataset):
    orchestrator = build_orchestrator(toy_config, dataset)
    other = AdaptationDataset(
        domains=make_domains("calendar", "housing", "blocks"),
        target_domain=2,
        target_dev=(make_instance(2, "find block", "( block )"),),
    )
    with pytest.raises(CheckpointError, match="'blocks' is unknown"):
        align_domains(orchestrator, other, other.target_dev)


def test_dump_representations(toy_config, dataset, tmp_path):
    orchestrator = build_orchestrator(toy_config, dataset)
    prepared = orchestrator.preprocessor.prepare_all(dataset.source_train + dataset.target_train)
    out = tmp_path / "reprs.tsv"
    vectors, score = dump_representations(orchestrator, prepared, "fine", out)
    width = toy_config.hyperparams.encoder_output_width
    assert vectors.shape == (len(prepared), width)
    rows = read_tsv(out)
    assert len(rows) == len(prepared) and len(rows[0]) == width + 1
    assert score is not None and score > 0.0
    with pytest.raises(ModelError):
        dump_representations(orchestrator, prepared, "middle")


def test_dump_representations_single_domain_has_no_score(toy_config, dataset):
    orchestrator = build_orchestrator(toy_config, dataset)
    prepared = orchestrator.preprocessor.prepare_all(dataset.target_train)
    _, score = dump_representations(orchestrator, prepared, "coarse")
    assert score is None


def test_stage_separation_flags_coarse_not_below_fine():
    assert not StageSeparation(count=6, domains=3, coarse_ch=1.5, fine_ch=4.0).flagged
    flagged = StageSeparation(count=6, domains=3, coarse_ch=4.0, fine_ch=4.0)
    assert flagged.flagged
    assert "FLAG" in flagged.render()
    undefined = StageSeparation(count=2, domains=1)
    assert not undefined.flagged
    assert "undefined" in undefined.render()


def test_compare_stage_separation_records_both_stages(toy_config, dataset, tmp_path):
    orchestrator = build_orchestrator(toy_config, dataset)
    prepared = orchestrator.preprocessor.prepare_all(dataset.source_train + dataset.target_train)
    report = compare_stage_separation(orchestrator, prepared, tmp_path)
    _, coarse = dump_representations(orchestrator, prepared, "coarse")
    _, fine = dump_representations(orchestrator, prepared, "fine")
    assert report.coarse_ch == pytest.approx(coarse)
    assert report.fine_ch == pytest.approx(fine)
    assert report.flagged == (coarse >= fine)
    assert (report.count, report.domains) == (len(prepared), 3)

    saved = json.loads((tmp_path / "separation.json").read_text(encoding="utf-8"))
    assert saved["flagged"] == report.flagged
    assert saved["coarse_ch"] == pytest.approx(coarse)
    assert len(read_tsv(tmp_path / "reprs_coarse.tsv")) == len(prepared)
    assert len(read_tsv(tmp_path / "reprs_fine.tsv")) == len(prepared)


def test_compare_stage_separation_warns_when_violated(toy_config, dataset, monkeypatch, caplog):
    orchestrator = build_orchestrator(toy_config, dataset)
    prepared = orchestrator.preprocessor.prepare_all(dataset.target_train)
    scores = {"coarse": 9.0, "fine": 2.0}
    monkeypatch.setattr(
        "damp.services.evaluation.dump_representations",
        lambda orch, prep, stage, path=None: (None, scores[stage]),
    )
    with caplog.at_level("WARNING", logger="damp.eval"):
        report = compare_stage_separation(orchestrator, prepared)
    assert report.flagged
    assert "not less domain-separable" in caplog.text


def test_compare_stage_separation_needs_two_stages(toy_config, dataset):
    orchestrator = build_orchestrator(toy_config.model_copy(update={"strategy": "seq2seq"}), dataset)
    with pytest.raises(ModelError, match="no coarse stage"):
        compare_stage_separation(orchestrator, orchestrator.preprocessor.prepare_all(dataset.target_train))


def test_dump_attention(toy_config, dataset, tmp_path):
    orchestrator = build_orchestrator(toy_config, dataset)
    prep = orchestrator.preprocessor.prepare(dataset.target_train[0])
    out = tmp_path / "attention.tsv"
    rows = dump_attention(orchestrator, prep, out)
    coarse = [r for r in rows if r[0] == "coarse"]
    fine = [r for r in rows if r[0] == "fine"]
    assert len(coarse) == 2 * (len(prep.sketch_ids) + 1)
    assert len(fine) == 3 * (len(prep.lf_ids) + 1)
    for _, _, kind, weights in rows:
        expected = len(prep.sketch_ids) if kind == "sketch" else len(prep.utterance)
        assert weights.shape == (expected,)
        assert weights.sum() == pytest.approx(1.0)
    assert len(read_tsv(out)) == len(rows)
