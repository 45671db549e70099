"""
Domain relevance of utterance words and the attention priors built from it.

Relevance is measured against frozen word vectors: the query vector of a
domain is the mean of the vectors of its query words (the domain name when
none are configured), and the k utterance positions with the highest cosine
similarity to it are relevant. Words without a vector score 0.
"""
from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from damp.core.exceptions import RelevanceError
from damp.core.io import write_tsv

logger = logging.getLogger("damp.relevance")

Stage = Literal["coarse", "fine"]


@dataclass(frozen=True)
class PriorVector:
    q: np.ndarray  # one weight per utterance position
    stage: Stage

    def __post_init__(self) -> None:
        if self.q.ndim != 1:
            raise ValueError("prior must be a vector")

    def __len__(self) -> int:
        return int(self.q.shape[0])

    @classmethod
    def ones(cls, length: int, stage: Stage) -> "PriorVector":
        return cls(np.ones(length), stage)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"cosine: length mismatch {u.shape[0]} vs {v.shape[0]}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def query_vector(domain: str, query: Sequence[str], vectors: Mapping[str, np.ndarray]) -> np.ndarray:
    found = [vectors[w] for w in query if w in vectors]
    if not found:
        raise RelevanceError(domain, f"none of the query words {list(query)} has a vector")
    return np.mean(np.stack(found), axis=0)


def domain_relevant_positions(
    utterance: Sequence[str],
    domain_query: Sequence[str],
    vectors: Mapping[str, np.ndarray],
    k: int,
    domain: str = "",
) -> frozenset[int]:
    """Positions of the k utterance tokens most similar to the domain query.

    Ties go to the leftmost position; k is capped at the utterance length.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    if k == 0:
        return frozenset()
    target = query_vector(domain or " ".join(domain_query), domain_query, vectors)
    scores = [cosine(vectors[w], target) if w in vectors else 0.0 for w in utterance]
    ranked = sorted(range(len(utterance)), key=lambda pos: (-scores[pos], pos))
    return frozenset(ranked[:k])


def build_prior(relevant: Iterable[int], length: int, stage: Stage, r_c: float, r_f: float) -> PriorVector:
    """coarse: 1 on relevant words, r_c elsewhere; fine: r_f on relevant words, 1 elsewhere."""
    relevant = set(relevant)
    bad = [pos for pos in relevant if not 0 <= pos < length]
    if bad:
        raise ValueError(f"relevant position {bad[0]} outside utterance of length {length}")
    mask = np.zeros(length, dtype=bool)
    mask[list(relevant)] = True
    if stage == "coarse":
        q = np.where(mask, 1.0, r_c)
    elif stage == "fine":
        q = np.where(mask, r_f, 1.0)
    else:
        raise ValueError(f"unknown stage '{stage}'")
    return PriorVector(q.astype(np.float64), stage)


@dataclass
class RelevanceScorer:
    """Relevance for any (utterance, domain) pair over one frozen vector table.

    `lexical()` builds the table without pretrained vectors: query words get
    one-hot vectors, so only literal occurrences of a query word score above 0.
    """

    vectors: dict[str, np.ndarray]
    queries: dict[str, tuple[str, ...]] = field(default_factory=dict)
    k: int = 2
    _cache: dict[tuple[str, tuple[str, ...]], frozenset[int]] = field(default_factory=dict, repr=False)

    @classmethod
    def lexical(cls, queries: Mapping[str, Sequence[str]], domains: Iterable[str], k: int = 2) -> "RelevanceScorer":
        full = {d: tuple(queries.get(d) or (d,)) for d in domains}
        full.update({d: tuple(q) for d, q in queries.items()})
        words = sorted({w for q in full.values() for w in q})
        eye = np.eye(len(words))
        return cls({w: eye[i] for i, w in enumerate(words)}, full, k)

    @classmethod
    def from_table(
        cls, words: Sequence[str], matrix: np.ndarray, queries: Mapping[str, Sequence[str]], k: int
    ) -> "RelevanceScorer":
        if matrix.shape[0] != len(words):
            raise ValueError("relevance table rows must match its word list")
        return cls({w: matrix[i] for i, w in enumerate(words)}, {d: tuple(q) for d, q in queries.items()}, k)

    def query(self, domain: str) -> tuple[str, ...]:
        return self.queries.get(domain) or (domain,)

    def relevant_positions(self, utterance: Sequence[str], domain: str) -> frozenset[int]:
        key = (domain, tuple(utterance))
        if key not in self._cache:
            self._cache[key] = domain_relevant_positions(utterance, self.query(domain), self.vectors, self.k, domain)
        return self._cache[key]

    def check_domains(self, domains: Iterable[str]) -> None:
        """Fail early for a domain whose query has no vector at all."""
        for domain in domains:
            query_vector(domain, self.query(domain), self.vectors)

    def table(self) -> tuple[list[str], np.ndarray]:
        words = sorted(self.vectors)
        if not words:
            return [], np.zeros((0, 1))
        return words, np.stack([self.vectors[w] for w in words])


def write_relevance_dump(path: Path, rows: Iterable[tuple[str, Sequence[str], Iterable[int]]]) -> int:
    return write_tsv(
        path,
        ("domain", "utterance", "relevant_positions"),
        ((d, " ".join(u), " ".join(str(p) for p in sorted(pos))) for d, u, pos in rows),
    )
