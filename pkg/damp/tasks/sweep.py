"""
Target-data sweep: one training run per target fraction, each evaluated on
the same target split.
"""
from __future__ import annotations

import logging
import time
from collections.abc import Sequence
from pathlib import Path

from damp.core.io import write_tsv
from damp.schemas.eval import SweepRow
from damp.schemas.train import TrainConfig
from damp.services.corpus import Corpora, make_adaptation_split
from damp.services.evaluation import evaluate
from damp.tasks.training import train

logger = logging.getLogger("damp.sweep")


def fraction_dir(out_dir: Path, fraction: float) -> Path:
    return Path(out_dir) / f"fraction_{fraction:g}"


def sweep_target_fraction(
    fractions: Sequence[float],
    config: TrainConfig,
    corpora: Corpora,
    target_domain: str,
    dev_fraction: float = 0.20,
    split_seed: int = 0,
    embeddings: Path | None = None,
    test_corpora: Corpora | None = None,
    min_count: int = 1,
    out_path: Path | None = None,
) -> list[SweepRow]:
    """Train and evaluate once per fraction; the split seed is shared by all runs."""
    rows: list[SweepRow] = []
    start = time.perf_counter()
    for fraction in fractions:
        dataset = make_adaptation_split(
            corpora, target_domain, fraction, dev_fraction, split_seed, test_corpora
        )
        run_config = config.model_copy(update={"out_dir": fraction_dir(config.out_dir, fraction)})
        logger.info("Sweep %s: fraction %g, %d target instances", config.strategy, fraction, len(dataset.target_train))
        result = train(run_config, dataset, embeddings=embeddings, min_count=min_count)
        report = evaluate(dataset, result.best_checkpoint, workers=config.workers)
        row = SweepRow(
            fraction=fraction,
            n_target=len(dataset.target_train),
            sketch_em=report.sketch_em,
            lf_em=report.lf_em,
        )
        rows.append(row)
        if out_path is not None:
            write_tsv(out_path, SweepRow.COLUMNS, (r.to_row() for r in rows))
    logger.info("Sweep finished: %d runs in %.1fs", len(rows), time.perf_counter() - start)
    return rows
