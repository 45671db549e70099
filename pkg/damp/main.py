"""
DAMP Workbench - Command-Line Entry Point
=========================================
One subcommand per pipeline step. Settings come from an optional flat config
file overridden by flags; every failure maps to an exit code in one place.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from collections.abc import Callable, Sequence
from pathlib import Path

from damp.ai.orchestrator import ParseOrchestrator
from damp.core.config import Settings, load_settings
from damp.core.exceptions import DampError, DataError, ModelError, UsageError
from damp.numerics.gradcheck import grad_check
from damp.schemas.corpus import AdaptationDataset
from damp.schemas.train import STRATEGIES
from damp.services.corpus import load_corpus, make_adaptation_split
from damp.services.preprocess import PreparedInstance
from damp.services.evaluation import (
    align_domains,
    compare_stage_separation,
    dump_attention,
    dump_representations,
    evaluate,
)
from damp.services.sketch import compute_token_shares, induce_sketch, make_classifier, write_sketch_dump
from damp.tasks.sweep import sweep_target_fraction
from damp.tasks.training import build_orchestrator, train

LOG_FORMAT = "%(asctime)s | %(levelname)-8s | %(name)s | %(message)s"
GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_FLOOR = 1e-3

logger = logging.getLogger("damp")


class ArgumentParser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so usage errors share the exit mapping."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


# ── Argument surface ───────────────────────────────────
def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key=value settings file")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", type=Path)


def _data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path)
    p.add_argument("--test-data", type=Path)
    p.add_argument("--target-domain", "--target", dest="target_domain")
    p.add_argument("--target-fraction", type=float)
    p.add_argument("--dev-fraction", type=float)
    p.add_argument("--min-count", type=int)


def _model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--embeddings", type=Path)
    p.add_argument("--epochs", type=int)


def _decode(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--beam", dest="beam_size", type=int)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="damp", description="Domain-adaptive coarse-to-fine semantic parsing")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    p = sub.add_parser("induce-sketch", help="induce sketches for every instance and dump them")
    _common(p)
    _data(p)

    p = sub.add_parser("train", help="train one strategy and evaluate its best checkpoint")
    _common(p)
    _data(p)
    _model(p)
    _decode(p)
    p.add_argument("--resume", action="store_true", help="continue from last.ckpt in the output directory")

    p = sub.add_parser("evaluate", help="Sketch / LF_oracle / LF exact match of a checkpoint")
    _common(p)
    _data(p)
    _decode(p)

    p = sub.add_parser("parse", help="parse one utterance")
    _common(p)
    _decode(p)
    p.add_argument("--utterance", required=True)
    p.add_argument("--domain")

    p = sub.add_parser("sweep", help="train and evaluate once per target fraction")
    _common(p)
    _data(p)
    _model(p)
    _decode(p)
    p.add_argument("--fractions")

    p = sub.add_parser("dump-attention", help="attention weights for one evaluation instance")
    _common(p)
    _data(p)
    _decode(p)
    p.add_argument("--index", type=int, default=0)

    p = sub.add_parser("dump-reprs", help="pooled representations and their Calinski-Harabasz index")
    _common(p)
    _data(p)
    _decode(p)
    p.add_argument("--stage", choices=("coarse", "fine", "both"), default="both")

    p = sub.add_parser("gradcheck", help="finite-difference check of the full training loss")
    _common(p)
    _data(p)
    _model(p)
    p.add_argument("--max-entries", type=int, default=5)
    return parser


SETTING_FLAGS = (
    "seed", "workers", "out", "data", "test_data", "target_domain", "target_fraction",
    "dev_fraction", "min_count", "strategy", "embeddings", "epochs", "checkpoint",
    "beam_size", "fractions",
)


def settings_from_args(args: argparse.Namespace, **extra) -> Settings:
    overrides = {name: getattr(args, name, None) for name in SETTING_FLAGS}
    overrides.update(extra)
    return load_settings(args.config, **overrides)


# ── Shared steps ───────────────────────────────────────
def load_dataset(settings: Settings) -> AdaptationDataset:
    if settings.data is None:
        raise UsageError("--data is required")
    if not settings.target_domain:
        raise UsageError("--target-domain is required")
    corpora = load_corpus(settings.data, settings.max_utterance_len, settings.max_lf_len)
    test = None
    if settings.test_data is not None:
        test = load_corpus(
            settings.test_data, settings.max_utterance_len, settings.max_lf_len, domains=tuple(corpora)
        )
    return make_adaptation_split(
        corpora, settings.target_domain, settings.target_fraction, settings.dev_fraction, settings.seed, test
    )


def _checkpoint(settings: Settings) -> ParseOrchestrator:
    if settings.checkpoint is None:
        raise UsageError("--checkpoint is required")
    return ParseOrchestrator.load(settings.checkpoint)


# ── Commands ───────────────────────────────────────────
def cmd_induce_sketch(args: argparse.Namespace) -> int:
    settings = settings_from_args(args)
    dataset = load_dataset(settings)
    source = {d: [i for i in dataset.source_train if i.domain == d.id] for d in dataset.source_domains}
    table = compute_token_shares(source)
    classify = make_classifier(table)
    rows = [
        (dataset.domains[i.domain].name, i.logical_form, induce_sketch(i.logical_form, classify)[0])
        for i in dataset.all_instances()
    ]
    if settings.out is not None:
        write_sketch_dump(settings.out, rows)
    general = sorted(table.general_tokens())
    print(f"source domains: {', '.join(table.source_domains)}")
    print(f"general tokens ({len(general)}): {' '.join(general)}")
    print(f"sketches: {len(rows)} ({len({str(s) for _, _, s in rows})} distinct)")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    settings = settings_from_args(args)
    dataset = load_dataset(settings)
    config = settings.train_config()
    result = train(config, dataset, settings.embeddings, resume=args.resume, min_count=settings.min_count)
    print(f"best epoch {result.best_epoch}: dev LF EM {100 * result.best_dev_lf_em:.2f}")
    print(f"checkpoint: {result.best_checkpoint}")
    if not result.best_checkpoint.is_file():
        return 0
    best = ParseOrchestrator.load(result.best_checkpoint)
    if dataset.evaluation_split:
        report = evaluate(dataset, best, workers=settings.workers)
        print(report.render())
    if best.parser.profile.two_stage and dataset.source_dev + dataset.evaluation_split:
        print(compare_stage_separation(best, _held_out(best, dataset), config.out_dir).render())
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    settings = settings_from_args(args)
    orchestrator = _checkpoint(settings)
    dataset = load_dataset(settings)
    report = evaluate(
        dataset, orchestrator, beam_size=settings.beam_size, workers=settings.workers,
        predictions_out=settings.out,
    )
    print(report.render())
    print(f"fallbacks: {report.fallbacks}")
    return 0


def cmd_parse(args: argparse.Namespace) -> int:
    settings = settings_from_args(args)
    orchestrator = _checkpoint(settings)
    tokens = args.utterance.split()
    if not tokens:
        raise UsageError("--utterance is empty")
    result = orchestrator.parse(tokens, args.domain, beam_size=settings.beam_size)
    print(f"sketch: {' '.join(result.sketch)}")
    print(f"logical form: {' '.join(result.logical_form)}")
    if result.fallback:
        print("(sketch unusable, decoded without constraints)")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    settings = settings_from_args(args)
    if settings.data is None or not settings.target_domain:
        raise UsageError("--data and --target-domain are required")
    fractions = settings.fractions_list
    corpora = load_corpus(settings.data, settings.max_utterance_len, settings.max_lf_len)
    test = None
    if settings.test_data is not None:
        test = load_corpus(settings.test_data, settings.max_utterance_len, settings.max_lf_len, domains=tuple(corpora))
    config = settings.train_config()
    rows = sweep_target_fraction(
        fractions, config, corpora, settings.target_domain,
        dev_fraction=settings.dev_fraction, split_seed=settings.seed, embeddings=settings.embeddings,
        test_corpora=test, min_count=settings.min_count, out_path=Path(config.out_dir) / "sweep.tsv",
    )
    print(f"{'fraction':>8} {'n':>6} {'Sketch':>8} {'LF':>8}")
    for row in rows:
        print(f"{row.fraction:>8g} {row.n_target:>6} {100 * row.sketch_em:>8.2f} {100 * row.lf_em:>8.2f}")
    return 0


def cmd_dump_attention(args: argparse.Namespace) -> int:
    settings = settings_from_args(args)
    orchestrator = _checkpoint(settings)
    dataset = load_dataset(settings)
    instances = align_domains(orchestrator, dataset, dataset.evaluation_split)
    if not 0 <= args.index < len(instances):
        raise UsageError(f"--index {args.index} outside 0..{len(instances) - 1}")
    prep = orchestrator.preprocessor.prepare(instances[args.index])
    rows = dump_attention(orchestrator, prep, settings.out)
    print(f"utterance: {' '.join(prep.utterance)}")
    print(f"relevant positions: {sorted(prep.relevant)}")
    print(f"attention rows: {len(rows)}")
    return 0


def _held_out(orchestrator: ParseOrchestrator, dataset: AdaptationDataset) -> list[PreparedInstance]:
    held_out = dataset.source_dev + dataset.evaluation_split
    prepared = orchestrator.preprocessor.prepare_all(align_domains(orchestrator, dataset, held_out))
    if not prepared:
        raise DataError("no held-out instances to represent")
    return prepared


def cmd_dump_reprs(args: argparse.Namespace) -> int:
    settings = settings_from_args(args)
    orchestrator = _checkpoint(settings)
    dataset = load_dataset(settings)
    prepared = _held_out(orchestrator, dataset)
    if args.stage == "both":
        print(compare_stage_separation(orchestrator, prepared, settings.out).render())
        return 0
    vectors, score = dump_representations(orchestrator, prepared, args.stage, settings.out)
    print(f"{args.stage} representations: {vectors.shape[0]} x {vectors.shape[1]}")
    print(f"Calinski-Harabasz: {score:.4f}" if score is not None else "Calinski-Harabasz: undefined")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    settings = settings_from_args(args, dropout=0.0)
    dataset = load_dataset(settings)
    orchestrator = build_orchestrator(settings.train_config(), dataset, settings.embeddings, settings.min_count)
    pre = orchestrator.preprocessor
    batch = pre.prepare_all((dataset.target_train + dataset.source_train)[:2])
    parser = orchestrator.parser
    error = grad_check(
        lambda: parser.forward_losses(batch, training=False)[0],
        parser.store, max_entries=args.max_entries, seed=settings.seed, floor=GRADCHECK_FLOOR,
    )
    print(f"max relative error: {error:.3e} over {len(parser.store)} tensors")
    if error > GRADCHECK_TOLERANCE:
        raise ModelError(f"gradient check failed: {error:.3e} > {GRADCHECK_TOLERANCE:g}")
    return 0


COMMANDS: dict[str, Callable[[argparse.Namespace], int]] = {
    "induce-sketch": cmd_induce_sketch,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "parse": cmd_parse,
    "sweep": cmd_sweep,
    "dump-attention": cmd_dump_attention,
    "dump-reprs": cmd_dump_reprs,
    "gradcheck": cmd_gradcheck,
}


# ── Entry point ────────────────────────────────────────
def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt="%Y-%m-%d %H:%M:%S", stream=sys.stdout, force=True)


def exit_code(exc: BaseException) -> int:
    """1 usage, 2 data, 3 model or checkpoint; anything unexpected is 3."""
    return exc.exit_code if isinstance(exc, DampError) else 3


def run(argv: Sequence[str] | None = None) -> int:
    start = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.verbose, args.quiet)
        code = COMMANDS[args.command](args)
    except DampError as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    except Exception as exc:
        logger.error("Unhandled exception: %s", exc, exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 3
    logger.debug("%s finished in %.1fs", args.command, time.perf_counter() - start)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
