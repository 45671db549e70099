"""
Sketch language: domain-general abstractions of logical forms.

A logical-form token is *general* when it appears in more than half of the
source domains (parentheses always are); everything else is *specific*.
A sketch copies general tokens and collapses each maximal run of k specific
tokens, together with the general non-parenthesis token right before it,
into one placeholder ``head@k`` (``hole@k`` when the run has no such head):

    ( getProperty ( singleton en.meeting ) )  ->  ( getProperty ( singleton@1 ) )
"""
from __future__ import annotations

import logging
import re
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

from damp.core.exceptions import AlignmentError
from damp.core.io import write_tsv
from damp.schemas.corpus import Domain, Instance

logger = logging.getLogger("damp.sketch")

TokenClass = Literal["general", "specific"]
Classifier = Callable[[str], TokenClass]

PARENTHESES = frozenset({"(", ")"})
HOLE = "hole"
_PLACEHOLDER = re.compile(r"^(?P<head>\S+)@(?P<count>[1-9][0-9]*)$")


# ── Token sharing ──────────────────────────────────────
@dataclass(frozen=True)
class TokenShareTable:
    shares: Mapping[str, frozenset[int]]  # token -> source-domain indices
    num_source_domains: int
    source_domains: tuple[str, ...] = ()

    def count(self, token: str) -> int:
        return len(self.shares.get(token, ()))

    def general_tokens(self) -> frozenset[str]:
        return frozenset(t for t in self.shares if classify_token(t, self) == "general") | PARENTHESES


def compute_token_shares(source_corpora: Mapping[Domain, Sequence[Instance]]) -> TokenShareTable:
    """For every source logical-form token, the set of source domains using it.

    Source domains are indexed 0..k-1 in order of their corpus ids.
    """
    domains = sorted(source_corpora, key=lambda d: d.id)
    if not domains:
        raise ValueError("at least one source domain is required")
    shares: dict[str, set[int]] = {}
    for index, domain in enumerate(domains):
        for instance in source_corpora[domain]:
            for token in instance.logical_form:
                shares.setdefault(token, set()).add(index)
    table = TokenShareTable(
        shares={tok: frozenset(ids) for tok, ids in shares.items()},
        num_source_domains=len(domains),
        source_domains=tuple(d.name for d in domains),
    )
    logger.info(
        "Token shares over %d source domains: %d tokens, %d general",
        len(domains), len(shares), len(table.general_tokens() - PARENTHESES),
    )
    return table


def classify_token(token: str, table: TokenShareTable) -> TokenClass:
    if token in PARENTHESES:
        return "general"
    if table.num_source_domains and table.count(token) / table.num_source_domains > 0.5:
        return "general"
    return "specific"


def make_classifier(table: TokenShareTable) -> Classifier:
    general = table.general_tokens()
    return lambda token: "general" if token in general else "specific"


# ── Sketches and alignments ────────────────────────────
def parse_placeholder(token: str) -> tuple[str, int] | None:
    """(head, k) for ``head@k`` tokens, None for plain tokens."""
    match = _PLACEHOLDER.match(token)
    if match is None:
        return None
    return match.group("head"), int(match.group("count"))


@dataclass(frozen=True)
class Sketch:
    tokens: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    def __str__(self) -> str:
        return " ".join(self.tokens)

    @property
    def placeholders(self) -> list[int]:
        return [i for i, tok in enumerate(self.tokens) if parse_placeholder(tok) is not None]

    @property
    def slot_count(self) -> int:
        return sum(parse_placeholder(t)[1] for t in self.tokens if parse_placeholder(t) is not None)


@dataclass(frozen=True)
class Alignment:
    """Per sketch position, the logical-form positions it covers.

    `anchored[k]` is True when the first covered position corresponds to the
    sketch token itself (a general token, or the head of ``head@k``); the
    remaining positions of a span are specific slots.
    """

    spans: tuple[tuple[int, ...], ...]
    anchored: tuple[bool, ...]

    @property
    def lf_length(self) -> int:
        return sum(len(s) for s in self.spans)

    def lf_to_sketch(self) -> list[int | None]:
        """Sketch index for logical-form positions that correspond to a sketch token."""
        mapping: list[int | None] = [None] * self.lf_length
        for k, (span, anchored) in enumerate(zip(self.spans, self.anchored)):
            if anchored:
                mapping[span[0]] = k
        return mapping

    def slot_positions(self) -> list[int]:
        return [
            pos
            for span, anchored in zip(self.spans, self.anchored)
            for pos in (span[1:] if anchored else span)
        ]


def induce_sketch(logical_form: Sequence[str], classify: Classifier) -> tuple[Sketch, Alignment]:
    if not logical_form:
        raise ValueError("logical form must be non-empty")
    n = len(logical_form)

    def run_length(start: int) -> int:
        end = start
        while end < n and classify(logical_form[end]) == "specific":
            end += 1
        return end - start

    tokens: list[str] = []
    spans: list[tuple[int, ...]] = []
    anchored: list[bool] = []
    j = 0
    while j < n:
        token = logical_form[j]
        if classify(token) == "specific":
            k = run_length(j)
            tokens.append(f"{HOLE}@{k}")
            spans.append(tuple(range(j, j + k)))
            anchored.append(False)
            j += k
            continue
        k = 0 if token in PARENTHESES else run_length(j + 1)
        tokens.append(f"{token}@{k}" if k else token)
        spans.append(tuple(range(j, j + k + 1)))
        anchored.append(True)
        j += k + 1
    return Sketch(tuple(tokens)), Alignment(tuple(spans), tuple(anchored))


def align(logical_form: Sequence[str], sketch: Sketch | Sequence[str]) -> Alignment:
    """Walk sketch and logical form in parallel; general tokens must agree."""
    sketch_tokens = sketch.tokens if isinstance(sketch, Sketch) else tuple(sketch)
    n = len(logical_form)
    spans: list[tuple[int, ...]] = []
    anchored: list[bool] = []
    j = 0
    for token in sketch_tokens:
        placeholder = parse_placeholder(token)
        if placeholder is None:
            if j >= n or logical_form[j] != token:
                found = logical_form[j] if j < n else "end of logical form"
                raise AlignmentError(j, f"expected {token!r}, found {found!r}")
            spans.append((j,))
            anchored.append(True)
            j += 1
            continue
        head, count = placeholder
        if head == HOLE:
            if j + count > n:
                raise AlignmentError(j, f"{token!r} needs {count} slots, logical form ends")
            spans.append(tuple(range(j, j + count)))
            anchored.append(False)
            j += count
            continue
        if j >= n or logical_form[j] != head:
            found = logical_form[j] if j < n else "end of logical form"
            raise AlignmentError(j, f"expected head {head!r}, found {found!r}")
        if j + 1 + count > n:
            raise AlignmentError(j, f"{token!r} needs {count} slots, logical form ends")
        spans.append(tuple(range(j, j + count + 1)))
        anchored.append(True)
        j += count + 1
    if j != n:
        raise AlignmentError(j, "logical form continues past the end of the sketch")
    return Alignment(tuple(spans), tuple(anchored))


def reconstruct(sketch: Sketch | Sequence[str], slots: Sequence[str]) -> list[str]:
    """Fill placeholder slots, in order, back into a logical form."""
    tokens = sketch.tokens if isinstance(sketch, Sketch) else tuple(sketch)
    out: list[str] = []
    it = iter(slots)
    for token in tokens:
        placeholder = parse_placeholder(token)
        if placeholder is None:
            out.append(token)
            continue
        head, count = placeholder
        if head != HOLE:
            out.append(head)
        for _ in range(count):
            try:
                out.append(next(it))
            except StopIteration:
                raise ValueError(f"not enough slot tokens for {token!r}") from None
    if next(it, None) is not None:
        raise ValueError("more slot tokens than placeholder slots")
    return out


def slot_tokens(logical_form: Sequence[str], alignment: Alignment) -> list[str]:
    return [logical_form[p] for p in alignment.slot_positions()]


def is_well_formed(tokens: Sequence[str]) -> bool:
    """Non-empty with balanced parentheses."""
    depth = 0
    for token in tokens:
        if token == "(":
            depth += 1
        elif token == ")":
            depth -= 1
            if depth < 0:
                return False
    return bool(tokens) and depth == 0


# ── Decoding plan ──────────────────────────────────────
@dataclass(frozen=True)
class PlanStep:
    """One fine-stage output position: a fixed token, or a free slot."""

    token: str | None
    sketch_index: int | None

    @property
    def free(self) -> bool:
        return self.token is None


def decoding_plan(sketch: Sketch | Sequence[str]) -> list[PlanStep]:
    tokens = sketch.tokens if isinstance(sketch, Sketch) else tuple(sketch)
    plan: list[PlanStep] = []
    for index, token in enumerate(tokens):
        placeholder = parse_placeholder(token)
        if placeholder is None:
            plan.append(PlanStep(token, index))
            continue
        head, count = placeholder
        if head != HOLE:
            plan.append(PlanStep(head, index))
        plan.extend(PlanStep(None, None) for _ in range(count))
    return plan


# ── Metrics ────────────────────────────────────────────
def exact_match(pred: Sequence[str], gold: Sequence[str]) -> bool:
    return tuple(pred) == tuple(gold)


def em_rate(pairs: Iterable[tuple[Sequence[str], Sequence[str]]]) -> float:
    pairs = list(pairs)
    if not pairs:
        return 0.0
    return sum(exact_match(p, g) for p, g in pairs) / len(pairs)


def write_sketch_dump(
    path: Path, rows: Iterable[tuple[str, Sequence[str], Sketch]]
) -> int:
    return write_tsv(
        path,
        ("domain", "logical_form", "sketch"),
        ((domain, " ".join(lf), str(sketch)) for domain, lf, sketch in rows),
    )
