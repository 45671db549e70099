"""
Evaluation and analysis: exact-match reports, the Calinski-Harabasz index,
pooled-representation dumps and attention dumps.
"""
from __future__ import annotations

import logging
import time
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from damp.ai.layers import NO_DROPOUT
from damp.ai.orchestrator import ParseOrchestrator
from damp.core.exceptions import CheckpointError, DataError, ModelError
from damp.core.io import atomic_open, write_tsv
from damp.numerics.tensor import no_grad
from damp.schemas.corpus import AdaptationDataset, Instance
from damp.schemas.eval import DomainScore, EvalReport, Prediction, StageSeparation
from damp.services.preprocess import PreparedInstance
from damp.services.sketch import em_rate

logger = logging.getLogger("damp.eval")

AttentionRow = tuple[str, int, str, np.ndarray]
SEPARATION_REPORT = "separation.json"


# ── Exact match ────────────────────────────────────────
def predict(
    orchestrator: ParseOrchestrator, prep: PreparedInstance, beam_size: int | None = None, oracle: bool = True
) -> Prediction:
    result = orchestrator.parse_prepared(prep, beam_size)
    oracle_lf = orchestrator.parse_with_oracle_sketch(prep, beam_size=beam_size) if oracle else ()
    return Prediction(
        domain=prep.domain,
        utterance=prep.utterance,
        predicted_sketch=result.sketch,
        predicted_lf=result.logical_form,
        oracle_lf=oracle_lf,
        gold_sketch=prep.sketch.tokens if prep.sketch is not None else (),
        gold_lf=prep.logical_form,
        fallback=result.fallback,
    )


def _scores(predictions: Sequence[Prediction]) -> tuple[float, float, float]:
    return (
        em_rate((p.predicted_sketch, p.gold_sketch) for p in predictions),
        em_rate((p.oracle_lf, p.gold_lf) for p in predictions),
        em_rate((p.predicted_lf, p.gold_lf) for p in predictions),
    )


def report_from_predictions(predictions: Sequence[Prediction]) -> EvalReport:
    per_domain = []
    for domain in sorted({p.domain for p in predictions}):
        subset = [p for p in predictions if p.domain == domain]
        sketch, oracle, lf = _scores(subset)
        per_domain.append(DomainScore(domain=domain, count=len(subset), sketch_em=sketch, lf_oracle_em=oracle, lf_em=lf))
    sketch, oracle, lf = _scores(predictions)
    return EvalReport(
        sketch_em=sketch,
        lf_oracle_em=oracle,
        lf_em=lf,
        count=len(predictions),
        fallbacks=sum(p.fallback for p in predictions),
        per_domain=per_domain,
    )


def evaluate_prepared(
    orchestrator: ParseOrchestrator,
    prepared: Sequence[PreparedInstance],
    beam_size: int | None = None,
    workers: int = 1,
    oracle: bool = True,
) -> tuple[EvalReport, list[Prediction]]:
    """Decode every instance; threads share the frozen network read-only."""
    if workers > 1 and len(prepared) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            predictions = list(pool.map(lambda p: predict(orchestrator, p, beam_size, oracle), prepared))
    else:
        predictions = [predict(orchestrator, p, beam_size, oracle) for p in prepared]
    return report_from_predictions(predictions), predictions


def align_domains(orchestrator: ParseOrchestrator, dataset: AdaptationDataset, instances: Iterable[Instance]) -> list[Instance]:
    """Re-map dataset domain ids onto the checkpoint's domain table."""
    known = {name: i for i, name in enumerate(orchestrator.preprocessor.domain_names)}
    out = []
    for inst in instances:
        name = dataset.domains[inst.domain].name
        if name not in known:
            raise CheckpointError(f"domain '{name}' is unknown to the checkpoint (known: {', '.join(known)})")
        out.append(inst.model_copy(update={"domain": known[name]}))
    return out


def evaluate(
    dataset: AdaptationDataset,
    checkpoint: Path | ParseOrchestrator,
    instances: Sequence[Instance] | None = None,
    beam_size: int | None = None,
    workers: int = 1,
    predictions_out: Path | None = None,
) -> EvalReport:
    """Sketch, oracle-sketch LF and pipeline LF exact match over one split.

    Defaults to the dataset's evaluation split (target test, else target dev).
    """
    start = time.perf_counter()
    orchestrator = checkpoint if isinstance(checkpoint, ParseOrchestrator) else ParseOrchestrator.load(checkpoint)
    chosen = dataset.evaluation_split if instances is None else instances
    prepared = orchestrator.preprocessor.prepare_all(align_domains(orchestrator, dataset, chosen))
    report, predictions = evaluate_prepared(orchestrator, prepared, beam_size, workers)
    if predictions_out is not None:
        write_tsv(predictions_out, Prediction.COLUMNS, (p.to_row() for p in predictions))
    logger.info(
        "Evaluated %d instances in %.1fs: sketch %.4f, LF_oracle %.4f, LF %.4f",
        report.count, time.perf_counter() - start, report.sketch_em, report.lf_oracle_em, report.lf_em,
    )
    return report


# ── Clustering ─────────────────────────────────────────
def calinski_harabasz(points: np.ndarray, labels: Sequence[object]) -> float:
    """Between-cluster over within-cluster dispersion, each per degree of freedom."""
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    labels = list(labels)
    n = X.shape[0]
    if len(labels) != n:
        raise DataError("one label per point is required")
    clusters = sorted(set(labels), key=str)
    k = len(clusters)
    if k < 2:
        raise DataError("Calinski-Harabasz needs at least 2 clusters")
    if n <= k:
        raise DataError(f"Calinski-Harabasz needs more points ({n}) than clusters ({k})")
    centre = X.mean(axis=0)
    label_array = np.array([clusters.index(lab) for lab in labels])
    between = within = 0.0
    for c in range(k):
        members = X[label_array == c]
        mean = members.mean(axis=0)
        between += members.shape[0] * float(np.sum((mean - centre) ** 2))
        within += float(np.sum((members - mean) ** 2))
    if within == 0.0:
        raise DataError("Calinski-Harabasz is undefined when every cluster is a single point")
    return (between / (k - 1)) / (within / (n - k))


def dump_representations(
    orchestrator: ParseOrchestrator,
    prepared: Sequence[PreparedInstance],
    stage: str,
    path: Path | None = None,
) -> tuple[np.ndarray, float | None]:
    """Pooled u of one stage per instance; returns the matrix and the CH over domains."""
    if stage not in ("coarse", "fine"):
        raise ModelError(f"unknown stage '{stage}'")
    with no_grad():
        vectors = np.vstack([orchestrator.parser.pooled(p, stage).value for p in prepared])
    domains = [p.domain for p in prepared]
    if path is not None:
        write_tsv(
            path,
            ("domain", *(f"v{i + 1}" for i in range(vectors.shape[1]))),
            ([d, *(repr(float(x)) for x in row)] for d, row in zip(domains, vectors)),
        )
    try:
        score = calinski_harabasz(vectors, domains)
    except DataError as exc:
        logger.warning("No Calinski-Harabasz score for %s representations: %s", stage, exc)
        score = None
    else:
        logger.info("Calinski-Harabasz over %d %s representations: %.4f", len(domains), stage, score)
    return vectors, score


def compare_stage_separation(
    orchestrator: ParseOrchestrator,
    prepared: Sequence[PreparedInstance],
    out_dir: Path | None = None,
) -> StageSeparation:
    """CH of pooled coarse and fine representations of the same instances.

    With `out_dir`, both representation dumps and `separation.json` are written there.
    """
    if not orchestrator.parser.profile.two_stage:
        raise ModelError(f"strategy '{orchestrator.parser.strategy}' has no coarse stage to compare")
    scores: dict[str, float | None] = {}
    for stage in ("coarse", "fine"):
        path = Path(out_dir) / f"reprs_{stage}.tsv" if out_dir is not None else None
        _, scores[stage] = dump_representations(orchestrator, prepared, stage, path)
    report = StageSeparation(
        count=len(prepared),
        domains=len({p.domain for p in prepared}),
        coarse_ch=scores["coarse"],
        fine_ch=scores["fine"],
    )
    if report.flagged:
        logger.warning(
            "Coarse representations are not less domain-separable than fine ones: CH %.4f >= %.4f",
            report.coarse_ch, report.fine_ch,
        )
    if out_dir is not None:
        with atomic_open(Path(out_dir) / SEPARATION_REPORT) as handle:
            handle.write(report.model_dump_json(indent=2) + "\n")
    return report


def dump_attention(
    orchestrator: ParseOrchestrator, prep: PreparedInstance, path: Path | None = None
) -> list[AttentionRow]:
    """Teacher-forced attention rows over the gold targets of one instance."""
    parser = orchestrator.parser
    rows: list[AttentionRow] = []
    with no_grad():
        if parser.profile.two_stage:
            runs = [("coarse", parser.coarse_forced(prep, NO_DROPOUT)), ("fine", parser.fine_forced(prep, NO_DROPOUT))]
        else:
            runs = [("fine", parser.seq2seq_forced(prep, NO_DROPOUT))]
    for stage, run in runs:
        for t, step in enumerate(run.steps):
            rows.append((stage, t, "alpha", step.attention.alpha.value[0]))
            rows.append((stage, t, "alpha_pri", step.attention.alpha_pri.value[0]))
            if step.sketch_alpha is not None:
                rows.append((stage, t, "sketch", step.sketch_alpha.value[0]))
    if path is not None:
        write_tsv(
            path,
            ("stage", "step", "kind", "weights"),
            ((s, t, kind, " ".join(repr(float(w)) for w in weights)) for s, t, kind, weights in rows),
        )
    return rows
