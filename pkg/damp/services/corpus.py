"""
Corpus ingestion and source/target adaptation splits.
"""
from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from damp.core.exceptions import CorpusFormatError, SplitError
from damp.core.io import numbered_lines
from damp.schemas.corpus import AdaptationDataset, Domain, Instance

logger = logging.getLogger("damp.corpus")

Corpora = Mapping[Domain, Sequence[Instance]]


def load_corpus(
    path: Path,
    max_utterance_len: int = 100,
    max_lf_len: int = 200,
    domains: Sequence[Domain] = (),
) -> dict[Domain, list[Instance]]:
    """Read a 3-field TSV (domain, utterance, logical form), grouped by domain.

    Domain ids are dense, assigned by first appearance after any ids already
    fixed by `domains` (used to read a test file with the training ids).
    """
    path = Path(path)
    if not path.is_file():
        raise CorpusFormatError(str(path), 0, "file not found")
    by_name: dict[str, Domain] = {d.name: d for d in domains}
    grouped: dict[Domain, list[Instance]] = {}

    def undecodable(lineno: int, exc: UnicodeDecodeError) -> CorpusFormatError:
        return CorpusFormatError(str(path), lineno, f"invalid UTF-8 at byte {exc.start}")

    for lineno, raw in numbered_lines(path, undecodable):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise CorpusFormatError(str(path), lineno, f"expected 3 tab-separated fields, found {len(fields)}")
        name, utterance, logical_form = (f.strip() for f in fields)
        if not name or not utterance or not logical_form:
            raise CorpusFormatError(str(path), lineno, "empty field")
        x, y = utterance.split(), logical_form.split()
        if len(x) > max_utterance_len:
            raise CorpusFormatError(str(path), lineno, f"utterance longer than max_utterance_len={max_utterance_len}")
        if len(y) > max_lf_len:
            raise CorpusFormatError(str(path), lineno, f"logical form longer than max_lf_len={max_lf_len}")
        domain = by_name.get(name)
        if domain is None:
            domain = Domain(name=name, id=len(by_name))
            by_name[name] = domain
        try:
            instance = Instance(domain=domain.id, utterance=tuple(x), logical_form=tuple(y))
        except ValidationError as exc:
            raise CorpusFormatError(str(path), lineno, exc.errors()[0]["msg"]) from exc
        grouped.setdefault(domain, []).append(instance)
    logger.info(
        "Loaded %s: %s",
        path.name,
        ", ".join(f"{d.name}={len(v)}" for d, v in sorted(grouped.items(), key=lambda kv: kv[0].id)) or "empty",
    )
    return grouped


def round_half_up(value: float | Decimal) -> int:
    return int(Decimal(value).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def scaled_count(fraction: float, total: int) -> int:
    """round(fraction * total), halves away from zero, computed in decimal."""
    return round_half_up(Decimal(str(fraction)) * total)


def find_domain(corpora: Corpora, name: str) -> Domain:
    for domain in corpora:
        if domain.name == name:
            return domain
    known = ", ".join(sorted(d.name for d in corpora)) or "none"
    raise SplitError(f"unknown target domain '{name}' (known: {known})")


def make_adaptation_split(
    corpora: Corpora,
    target_domain: Domain | str,
    target_fraction: float = 0.10,
    dev_fraction: float = 0.20,
    seed: int = 0,
    test_corpora: Corpora | None = None,
) -> AdaptationDataset:
    """Per-domain dev/train split plus a seeded target-train subsample.

    The subsample takes a prefix of one seeded permutation of the target
    training pool, so smaller fractions always give subsets of larger ones.
    """
    if isinstance(target_domain, str):
        target_domain = find_domain(corpora, target_domain)
    if target_domain not in corpora:
        raise SplitError(f"unknown target domain '{target_domain.name}'")
    if not 0.0 < target_fraction <= 1.0:
        raise SplitError(f"target_fraction {target_fraction} outside (0, 1]")
    if not 0.0 < dev_fraction < 1.0:
        raise SplitError(f"dev_fraction {dev_fraction} outside (0, 1)")

    domains = tuple(sorted(corpora, key=lambda d: d.id))
    if [d.id for d in domains] != list(range(len(domains))):
        raise SplitError("domain ids must be dense from 0")

    source_train: list[Instance] = []
    source_dev: list[Instance] = []
    target_train: list[Instance] = []
    target_dev: list[Instance] = []
    for domain in domains:
        pool = list(corpora[domain])
        rng = np.random.default_rng([seed, domain.id])
        n_dev = scaled_count(dev_fraction, len(pool))
        dev_idx = set(rng.permutation(len(pool))[:n_dev].tolist())
        train = [inst for i, inst in enumerate(pool) if i not in dev_idx]
        dev = [inst for i, inst in enumerate(pool) if i in dev_idx]
        if domain == target_domain:
            target_train, target_dev = train, dev
        else:
            source_train.extend(train)
            source_dev.extend(dev)

    full = len(target_train)
    if full == 0:
        raise SplitError(f"target domain '{target_domain.name}' has no training instances")
    n_keep = max(1, scaled_count(target_fraction, full))
    order = np.random.default_rng([seed, target_domain.id, 1]).permutation(full)
    keep = set(order[:n_keep].tolist())
    target_train = [inst for i, inst in enumerate(target_train) if i in keep]

    target_test: list[Instance] = []
    if test_corpora is not None:
        for domain, instances in test_corpora.items():
            if domain.name == target_domain.name:
                target_test = [i.model_copy(update={"domain": target_domain.id}) for i in instances]

    dataset = AdaptationDataset(
        domains=domains,
        target_domain=target_domain.id,
        source_train=tuple(source_train),
        source_dev=tuple(source_dev),
        target_train=tuple(target_train),
        target_dev=tuple(target_dev),
        target_test=tuple(target_test),
        target_fraction=target_fraction,
        seed=seed,
    )
    logger.info(
        "Split target=%s: source %d/%d, target train %d of %d, dev %d, test %d",
        target_domain.name, len(source_train), len(source_dev),
        len(target_train), full, len(target_dev), len(target_test),
    )
    return dataset
