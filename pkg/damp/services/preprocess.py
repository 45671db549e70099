"""
Instance preparation: token ids, gold sketch and alignment, relevance priors.

Everything here is computed once per instance before training so that the
training loop only does arithmetic.
"""
from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from damp.schemas.corpus import Instance
from damp.schemas.model import Hyperparams
from damp.services.relevance import PriorVector, RelevanceScorer, build_prior
from damp.services.sketch import (
    Alignment,
    Classifier,
    Sketch,
    TokenShareTable,
    induce_sketch,
    make_classifier,
)
from damp.services.vocab import RESERVED, Vocabulary, build_vocab


@dataclass(frozen=True)
class Vocabularies:
    utterance: Vocabulary
    sketch: Vocabulary
    logical_form: Vocabulary

    @classmethod
    def build(
        cls,
        instances: Iterable[Instance],
        classify: Classifier,
        min_count: int = 1,
    ) -> "Vocabularies":
        instances = list(instances)
        sketches = [induce_sketch(i.logical_form, classify)[0].tokens for i in instances]
        return cls(
            utterance=build_vocab((i.utterance for i in instances), min_count),
            # sketch and logical-form vocabularies keep every token: the decoders must be able to emit them
            sketch=build_vocab(sketches),
            logical_form=build_vocab(i.logical_form for i in instances),
        )


@dataclass(frozen=True)
class PreparedInstance:
    instance: Instance | None  # None for a bare utterance at parse time
    domain: str
    is_source: bool
    utterance: tuple[str, ...]
    utterance_ids: tuple[int, ...]
    coarse_prior: PriorVector
    fine_prior: PriorVector
    relevant: frozenset[int]
    sketch: Sketch | None = None
    sketch_ids: tuple[int, ...] = ()
    alignment: Alignment | None = None
    lf_ids: tuple[int, ...] = ()

    @property
    def logical_form(self) -> tuple[str, ...]:
        return self.instance.logical_form if self.instance is not None else ()

    @property
    def lf_to_sketch(self) -> list[int | None]:
        if self.alignment is None:
            raise ValueError("instance has no gold alignment")
        return self.alignment.lf_to_sketch()


class Preprocessor:
    """Turns instances into PreparedInstance records for one trained setup."""

    def __init__(
        self,
        vocabs: Vocabularies,
        share_table: TokenShareTable,
        scorer: RelevanceScorer,
        hyperparams: Hyperparams,
        domain_names: Sequence[str],
        target_domain: int,
    ):
        self.vocabs = vocabs
        self.share_table = share_table
        self.classify = make_classifier(share_table)
        self.scorer = scorer
        self.hyperparams = hyperparams
        self.domain_names = tuple(domain_names)
        self.target_domain = target_domain

    @property
    def target_name(self) -> str:
        return self.domain_names[self.target_domain]

    def priors(self, utterance: Sequence[str], domain: str) -> tuple[PriorVector, PriorVector, frozenset[int]]:
        relevant = self.scorer.relevant_positions(utterance, domain)
        hp = self.hyperparams
        return (
            build_prior(relevant, len(utterance), "coarse", hp.r_c, hp.r_f),
            build_prior(relevant, len(utterance), "fine", hp.r_c, hp.r_f),
            relevant,
        )

    def prepare_utterance(self, utterance: Sequence[str], domain: str | None = None) -> PreparedInstance:
        domain = domain or self.target_name
        coarse, fine, relevant = self.priors(utterance, domain)
        return PreparedInstance(
            instance=None,
            domain=domain,
            is_source=domain != self.target_name,
            utterance=tuple(utterance),
            utterance_ids=tuple(self.vocabs.utterance.encode(utterance)),
            coarse_prior=coarse,
            fine_prior=fine,
            relevant=relevant,
        )

    def prepare(self, instance: Instance) -> PreparedInstance:
        domain = self.domain_names[instance.domain]
        coarse, fine, relevant = self.priors(instance.utterance, domain)
        sketch, alignment = induce_sketch(instance.logical_form, self.classify)
        return PreparedInstance(
            instance=instance,
            domain=domain,
            is_source=instance.domain != self.target_domain,
            utterance=instance.utterance,
            utterance_ids=tuple(self.vocabs.utterance.encode(instance.utterance)),
            coarse_prior=coarse,
            fine_prior=fine,
            relevant=relevant,
            sketch=sketch,
            sketch_ids=tuple(self.vocabs.sketch.encode(sketch.tokens)),
            alignment=alignment,
            lf_ids=tuple(self.vocabs.logical_form.encode(instance.logical_form)),
        )

    def prepare_all(self, instances: Iterable[Instance]) -> list[PreparedInstance]:
        return [self.prepare(i) for i in instances]

    def specific_lf_ids(self) -> np.ndarray:
        """Logical-form vocabulary ids a free sketch slot may take."""
        tokens = self.vocabs.logical_form.tokens
        ids = [i for i, tok in enumerate(tokens) if tok not in RESERVED and self.classify(tok) == "specific"]
        if not ids:
            ids = [i for i, tok in enumerate(tokens) if tok not in RESERVED]
        return np.array(ids, dtype=np.int64)
