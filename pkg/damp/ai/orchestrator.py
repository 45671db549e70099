"""
Parse Orchestrator: Two-Stage Decoding Pipeline
================================================
Decodes a sketch with the coarse stage, then the logical form with the fine
stage over that sketch. Also owns the checkpoint bundle: the tensor archive
plus its JSON manifest.
"""
from __future__ import annotations

import json
import logging
import math
import time
from collections.abc import Sequence
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from damp.ai.beam import Hypothesis, StepDecoder, beam_search, greedy
from damp.ai.parser import DampParser
from damp.core.exceptions import CheckpointError
from damp.core.io import atomic_open
from damp.numerics.checkpoint import load_checkpoint, save_checkpoint
from damp.numerics.tensor import no_grad
from damp.schemas.eval import ParseResult
from damp.schemas.manifest import MANIFEST_VERSION, ModelManifest
from damp.services.preprocess import PreparedInstance, Preprocessor, Vocabularies
from damp.services.relevance import RelevanceScorer
from damp.services.sketch import (
    TokenShareTable,
    decoding_plan,
    induce_sketch,
    is_well_formed,
)
from damp.services.vocab import RESERVED, UNK_ID, Vocabulary

logger = logging.getLogger("damp.orchestrator")

RELEVANCE_TENSOR = "frozen.relevance.vectors"


def manifest_path(path: Path) -> Path:
    return Path(f"{path}.json")


def decode_length(longest: int) -> int:
    """Decode budget: 1.5 x the longest training sequence, plus EOS."""
    return max(1, math.ceil(1.5 * longest)) + 1


class ParseOrchestrator:
    """Runs the two-stage parse pipeline over one trained network."""

    def __init__(
        self,
        parser: DampParser,
        preprocessor: Preprocessor,
        max_sketch_len: int,
        max_lf_len: int,
    ):
        self.parser = parser
        self.preprocessor = preprocessor
        hp = parser.hyperparams
        self.max_sketch_len = hp.max_sketch_decode_len or max_sketch_len
        self.max_lf_len = hp.max_lf_decode_len or max_lf_len
        self._free_ids = preprocessor.specific_lf_ids()

    @property
    def hyperparams(self):
        return self.parser.hyperparams

    @property
    def two_stage(self) -> bool:
        return self.parser.profile.two_stage

    def _search(self, decoder: StepDecoder, beam_size: int, max_len: int) -> Hypothesis:
        if beam_size == 1:
            return greedy(decoder, max_len)
        return beam_search(decoder, beam_size, max_len)

    # ── Stages ─────────────────────────────────────────
    def decode_sketch(self, prep: PreparedInstance, beam_size: int) -> tuple[tuple[str, ...], float]:
        decoder = self.parser.coarse_decoder(prep, self.max_sketch_len)
        best = self._search(decoder, beam_size, self.max_sketch_len)
        return tuple(self.parser.vocabs.sketch.decode(best.tokens)), best.score

    def decode_logical_form(
        self, prep: PreparedInstance, sketch: Sequence[str], beam_size: int
    ) -> tuple[tuple[str, ...], bool, float]:
        """(logical form, fallback flag, score) for a given sketch."""
        lf_vocab = self.parser.vocabs.logical_form
        sketch_ids = self.parser.vocabs.sketch.encode(sketch)
        if not is_well_formed(sketch):
            decoder = self.parser.fine_decoder(
                prep, sketch_ids or [UNK_ID], None, self._free_ids, self.max_lf_len
            )
            best = self._search(decoder, beam_size, self.max_lf_len)
            return tuple(lf_vocab.decode(best.tokens)), True, best.score

        plan = decoding_plan(sketch)
        constrained = self.hyperparams.constrained_fine
        decoder = self.parser.fine_decoder(
            prep, sketch_ids, plan, self._free_ids, self.max_lf_len, constrained=constrained
        )
        best = self._search(decoder, beam_size, decoder.max_len)
        tokens = []
        for t, token_id in enumerate(best.tokens):
            fixed = plan[t].token if constrained and t < len(plan) else None
            tokens.append(fixed if fixed is not None else lf_vocab.token(token_id))
        return tuple(tokens), False, best.score

    # ── Pipeline ───────────────────────────────────────
    def parse_prepared(self, prep: PreparedInstance, beam_size: int | None = None) -> ParseResult:
        beam_size = beam_size or self.hyperparams.beam_size
        with no_grad():
            if not self.two_stage:
                decoder = self.parser.seq2seq_decoder(prep, self.max_lf_len)
                best = self._search(decoder, beam_size, self.max_lf_len)
                lf = tuple(self.parser.vocabs.logical_form.decode(best.tokens))
                sketch = induce_sketch(lf, self.preprocessor.classify)[0].tokens if lf else ()
                return ParseResult(sketch=sketch, logical_form=lf, score=best.score)
            sketch, sketch_score = self.decode_sketch(prep, beam_size)
            lf, fallback, lf_score = self.decode_logical_form(prep, sketch, beam_size)
        if fallback:
            logger.debug("Unusable sketch %r, decoded without constraints", " ".join(sketch))
        return ParseResult(sketch=sketch, logical_form=lf, fallback=fallback, score=sketch_score + lf_score)

    def parse(self, utterance: Sequence[str], domain: str | None = None, beam_size: int | None = None) -> ParseResult:
        prep = self.preprocessor.prepare_utterance(utterance, domain)
        return self.parse_prepared(prep, beam_size)

    def parse_with_oracle_sketch(
        self, prep: PreparedInstance, sketch: Sequence[str] | None = None, beam_size: int | None = None
    ) -> tuple[str, ...]:
        """Fine stage only, over the gold sketch (or the one given)."""
        beam_size = beam_size or self.hyperparams.beam_size
        if not self.two_stage:
            return self.parse_prepared(prep, beam_size).logical_form
        if sketch is None:
            if prep.sketch is None:
                raise CheckpointError("oracle decoding needs a gold sketch")
            sketch = prep.sketch.tokens
        with no_grad():
            return self.decode_logical_form(prep, sketch, beam_size)[0]

    # ── Checkpoint bundle ──────────────────────────────
    def manifest(self, **progress) -> ModelManifest:
        pre = self.preprocessor
        words, _ = pre.scorer.table()
        return ModelManifest(
            version=MANIFEST_VERSION,
            strategy=self.parser.strategy,
            hyperparams=self.hyperparams,
            seed=self.parser.store.seed,
            utterance_vocab=pre.vocabs.utterance.tokens,
            sketch_vocab=pre.vocabs.sketch.tokens,
            lf_vocab=pre.vocabs.logical_form.tokens,
            domains=list(pre.domain_names),
            target_domain=pre.target_domain,
            source_domains=list(pre.share_table.source_domains),
            share_table={tok: sorted(ids) for tok, ids in sorted(pre.share_table.shares.items())},
            relevance_words=words,
            relevance_queries={d: list(q) for d, q in sorted(pre.scorer.queries.items())},
            max_sketch_len=self.max_sketch_len,
            max_lf_len=self.max_lf_len,
            **progress,
        )

    def save(self, path: Path, **progress) -> Path:
        """Write X (tensors, optimizer state included) and X.json (manifest)."""
        path = Path(path)
        tensors = dict(self.parser.store.state_dict(include_optimizer=True))
        words, matrix = self.preprocessor.scorer.table()
        if words:
            tensors[RELEVANCE_TENSOR] = matrix
        save_checkpoint(tensors, path)
        with atomic_open(manifest_path(path)) as handle:
            handle.write(self.manifest(**progress).model_dump_json(indent=2))
        logger.debug("Checkpoint written: %s", path)
        return path

    @classmethod
    def load(cls, path: Path) -> "ParseOrchestrator":
        start = time.perf_counter()
        path = Path(path)
        manifest = read_manifest(path)
        tensors = load_checkpoint(path)
        vocabs = Vocabularies(
            utterance=_vocab(manifest.utterance_vocab, "utterance"),
            sketch=_vocab(manifest.sketch_vocab, "sketch"),
            logical_form=_vocab(manifest.lf_vocab, "logical form"),
        )
        share_table = TokenShareTable(
            shares={tok: frozenset(ids) for tok, ids in manifest.share_table.items()},
            num_source_domains=len(manifest.source_domains),
            source_domains=tuple(manifest.source_domains),
        )
        hp = manifest.hyperparams
        matrix = tensors.get(RELEVANCE_TENSOR, np.zeros((0, 1)))
        if matrix.shape[0] != len(manifest.relevance_words):
            raise CheckpointError(f"{path}: relevance table does not match the manifest word list")
        scorer = RelevanceScorer.from_table(
            manifest.relevance_words, matrix, manifest.relevance_queries, hp.relevance_k
        )
        preprocessor = Preprocessor(vocabs, share_table, scorer, hp, manifest.domains, manifest.target_domain)
        parser = DampParser(manifest.strategy, hp, vocabs, seed=manifest.seed)
        parser.store.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("frozen.")})
        logger.info(
            "Loaded %s checkpoint %s (epoch %d) in %.2fs",
            manifest.strategy, path.name, manifest.epoch, time.perf_counter() - start,
        )
        return cls(parser, preprocessor, manifest.max_sketch_len, manifest.max_lf_len)


def read_manifest(path: Path) -> ModelManifest:
    target = manifest_path(Path(path))
    if not Path(path).is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    if not target.is_file():
        raise CheckpointError(f"checkpoint manifest not found: {target}")
    try:
        manifest = ModelManifest.model_validate(json.loads(target.read_text(encoding="utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError, ValidationError) as exc:
        raise CheckpointError(f"{target}: invalid manifest ({exc.__class__.__name__})") from exc
    if manifest.version != MANIFEST_VERSION:
        raise CheckpointError(f"{target}: manifest version {manifest.version}, expected {MANIFEST_VERSION}")
    return manifest


def _vocab(tokens: list[str], label: str) -> Vocabulary:
    if tuple(tokens[: len(RESERVED)]) != RESERVED:
        raise CheckpointError(f"{label} vocabulary does not start with the reserved tokens")
    return Vocabulary(tokens[len(RESERVED):])
