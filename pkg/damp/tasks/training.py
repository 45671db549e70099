"""
Training task: builds the network for a strategy, runs RMSProp epochs with
early stopping on dev logical-form exact match, and keeps `best.ckpt`,
`last.ckpt` and a TSV log in the output directory.

All randomness of epoch e derives from (seed, e), so a run resumed from
`last.ckpt` continues exactly as the uninterrupted run would have.
"""
from __future__ import annotations

import dataclasses
import logging
import time
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from damp.ai.orchestrator import ParseOrchestrator, decode_length, read_manifest
from damp.ai.parser import DampParser, profile_for
from damp.core.exceptions import CheckpointError, SplitError
from damp.core.io import read_tsv, write_tsv
from damp.numerics.checkpoint import load_checkpoint
from damp.numerics.optim import rmsprop_step
from damp.schemas.corpus import AdaptationDataset
from damp.schemas.model import LossBreakdown
from damp.schemas.train import EpochLog, Phase, TrainConfig, TrainResult
from damp.services.embeddings import read_word_vectors, table_from_vectors
from damp.services.evaluation import evaluate_prepared
from damp.services.preprocess import PreparedInstance, Preprocessor, Vocabularies
from damp.services.relevance import RelevanceScorer
from damp.services.sketch import compute_token_shares, make_classifier

logger = logging.getLogger("damp.train")

BEST, LAST, PRETRAIN, LOG = "best.ckpt", "last.ckpt", "pretrain.ckpt", "train_log.tsv"


@dataclasses.dataclass
class Progress:
    epoch: int = 0
    phase: Phase = "joint"
    phase_start_epoch: int = 1
    best_epoch: int = 0
    best_dev_lf_em: float = -1.0
    bad_epochs: int = 0

    def fields(self) -> dict:
        return dataclasses.asdict(self)


def build_orchestrator(
    config: TrainConfig,
    dataset: AdaptationDataset,
    embeddings: Path | None = None,
    min_count: int = 1,
) -> ParseOrchestrator:
    """Share table, vocabularies, relevance and a freshly initialised network."""
    hp = config.hyperparams
    if not dataset.source_domains:
        raise SplitError("at least one source domain is required")
    source = {d: [i for i in dataset.source_train if i.domain == d.id] for d in dataset.source_domains}
    share_table = compute_token_shares(source)
    train = list(dataset.source_train) + list(dataset.target_train)
    vocabs = Vocabularies.build(train, make_classifier(share_table), min_count)
    logger.info(
        "Vocabularies: utterance=%d sketch=%d logical_form=%d",
        len(vocabs.utterance), len(vocabs.sketch), len(vocabs.logical_form),
    )

    names = [d.name for d in dataset.domains]
    queries = {name: tuple(config.domain_queries.get(name) or (name,)) for name in names}
    queries.update(config.domain_queries)
    vectors = None
    if embeddings is not None:
        wanted = set(vocabs.utterance.tokens) | {w for q in queries.values() for w in q}
        vectors = read_word_vectors(embeddings, hp.embedding_dim, words=wanted)
    if vectors is not None and profile_for(config.strategy, hp).use_prior:
        scorer = RelevanceScorer(dict(vectors), queries, hp.relevance_k)
    else:
        scorer = RelevanceScorer.lexical(queries, names, hp.relevance_k)
    scorer.check_domains(names)

    utterance_table = None
    if vectors is not None:
        table = table_from_vectors(vectors, vocabs.utterance, hp.embedding_dim, config.seed)
        logger.info("Pretrained vectors for %d of %d utterance tokens", table.found, len(vocabs.utterance))
        utterance_table = table.matrix

    preprocessor = Preprocessor(vocabs, share_table, scorer, hp, names, dataset.target_domain)
    parser = DampParser(config.strategy, hp, vocabs, seed=config.seed, utterance_embeddings=utterance_table)
    longest_sketch = max(len(preprocessor.prepare(i).sketch_ids) for i in train)
    longest_lf = max(len(i.logical_form) for i in train)
    return ParseOrchestrator(parser, preprocessor, decode_length(longest_sketch), decode_length(longest_lf))


def run_epoch(
    orchestrator: ParseOrchestrator,
    pool: Sequence[PreparedInstance],
    config: TrainConfig,
    epoch: int,
) -> LossBreakdown:
    """One shuffled pass of mini-batch RMSProp; returns per-instance mean losses."""
    hp = config.hyperparams
    parser = orchestrator.parser
    order = np.random.default_rng([config.seed, epoch]).permutation(len(pool))
    dropout_rng = np.random.default_rng([config.seed, epoch, 1])
    total = LossBreakdown()
    for start in range(0, len(order), hp.batch_size):
        batch = [pool[i] for i in order[start:start + hp.batch_size]]
        loss, breakdown = parser.forward_losses(batch, training=True, rng=dropout_rng)
        loss.backward()
        rmsprop_step(
            parser.store, lr=hp.lr, rho=hp.rmsprop_decay, eps=hp.rmsprop_eps,
            weight_decay=hp.l2, clip_norm=hp.clip_norm,
        )
        total = total + breakdown.weighted(len(batch))
    return total.weighted(1.0 / len(pool))


def phases_for(config: TrainConfig) -> list[Phase]:
    return ["pretrain", "finetune"] if config.strategy == "pretrain_finetune" else ["joint"]


def _phase_done(progress: Progress, config: TrainConfig) -> bool:
    if progress.epoch >= progress.phase_start_epoch - 1 + config.epochs:
        return True
    if progress.bad_epochs >= config.patience:
        return True
    return config.stop_on_perfect_dev and progress.best_dev_lf_em >= 1.0


def _resume(orchestrator: ParseOrchestrator, config: TrainConfig, last: Path, log_path: Path) -> tuple[Progress, list[EpochLog]]:
    manifest = read_manifest(last)
    if (
        manifest.strategy != config.strategy
        or manifest.hyperparams != config.hyperparams
        or manifest.seed != config.seed
    ):
        raise CheckpointError(f"{last} was written with a different configuration")
    tensors = load_checkpoint(last)
    orchestrator.parser.store.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("frozen.")})
    progress = Progress(
        epoch=manifest.epoch,
        phase=manifest.phase,
        phase_start_epoch=manifest.phase_start_epoch,
        best_epoch=manifest.best_epoch,
        best_dev_lf_em=manifest.best_dev_lf_em,
        bad_epochs=manifest.bad_epochs,
    )
    history = []
    if log_path.is_file():
        history = [EpochLog.from_row(r) for r in read_tsv(log_path) if int(r[0]) <= manifest.epoch]
    logger.info("Resuming %s from epoch %d (%s phase)", config.strategy, manifest.epoch, manifest.phase)
    return progress, history


def train(
    config: TrainConfig,
    dataset: AdaptationDataset,
    embeddings: Path | None = None,
    resume: bool = False,
    min_count: int = 1,
) -> TrainResult:
    if not dataset.target_train:
        raise SplitError(f"target domain '{dataset.target.name}' has no training instances")
    start = time.perf_counter()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path, last_path, log_path = out_dir / BEST, out_dir / LAST, out_dir / LOG

    orchestrator = build_orchestrator(config, dataset, embeddings, min_count)
    pre = orchestrator.preprocessor
    source_train = pre.prepare_all(dataset.source_train)
    target_train = pre.prepare_all(dataset.target_train)
    pools: dict[Phase, list[PreparedInstance]] = {
        "joint": source_train + target_train,
        "pretrain": source_train,
        "finetune": target_train,
    }
    # without a dev split the phase's own training pool is monitored
    monitors: dict[Phase, list[PreparedInstance]] = {
        "joint": pre.prepare_all(dataset.target_dev) or pools["joint"],
        "pretrain": pre.prepare_all(dataset.source_dev) or pools["pretrain"],
        "finetune": pre.prepare_all(dataset.target_dev) or pools["finetune"],
    }
    phases = phases_for(config)
    if not pools[phases[0]]:
        raise SplitError(f"no training instances for the {phases[0]} phase")

    progress, history = Progress(phase=phases[0]), []
    if resume and last_path.is_file():
        progress, history = _resume(orchestrator, config, last_path, log_path)
    logger.info(
        "Training %s: %d source / %d target instances, %d epochs max, patience %d",
        config.strategy, len(source_train), len(target_train), config.epochs, config.patience,
    )

    for phase in phases[phases.index(progress.phase):]:
        if phase != progress.phase:
            # continue from the best weights of the previous phase
            tensors = load_checkpoint(out_dir / PRETRAIN)
            orchestrator.parser.store.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("frozen.")})
            progress = Progress(epoch=progress.epoch, phase=phase, phase_start_epoch=progress.epoch + 1)
            logger.info("Phase %s from epoch %d", phase, progress.phase_start_epoch)
        keep_path = out_dir / PRETRAIN if phase == "pretrain" else best_path
        pool, monitor = pools[phase], monitors[phase]

        while not _phase_done(progress, config):
            epoch = progress.epoch + 1
            epoch_start = time.perf_counter()
            losses = run_epoch(orchestrator, pool, config, epoch)
            report, _ = evaluate_prepared(orchestrator, monitor, beam_size=1, workers=config.workers, oracle=False)
            n_source = sum(p.is_source for p in pool)
            entry = EpochLog(
                epoch=epoch, phase=phase, n_source=n_source, n_target=len(pool) - n_source,
                losses=losses, dev_sketch_em=report.sketch_em, dev_lf_em=report.lf_em,
            )
            history.append(entry)
            write_tsv(log_path, EpochLog.COLUMNS, (h.to_row() for h in history))

            progress.epoch = epoch
            if report.lf_em > progress.best_dev_lf_em:
                progress.best_dev_lf_em, progress.best_epoch, progress.bad_epochs = report.lf_em, epoch, 0
                orchestrator.save(keep_path, **progress.fields())
            else:
                progress.bad_epochs += 1
            orchestrator.save(last_path, **progress.fields())
            logger.info(
                "Epoch %d [%s] loss_c=%.4f loss_f=%.4f dev sketch=%.4f lf=%.4f (%.1fs)",
                epoch, phase, losses.loss_c, losses.loss_f, report.sketch_em, report.lf_em,
                time.perf_counter() - epoch_start,
            )

    elapsed = time.perf_counter() - start
    logger.info(
        "Training %s finished in %.1fs: best dev LF EM %.4f at epoch %d",
        config.strategy, elapsed, progress.best_dev_lf_em, progress.best_epoch,
    )
    return TrainResult(
        best_checkpoint=best_path,
        last_checkpoint=last_path,
        log_path=log_path,
        history=history,
        best_epoch=progress.best_epoch,
        best_dev_lf_em=max(progress.best_dev_lf_em, 0.0),
    )
