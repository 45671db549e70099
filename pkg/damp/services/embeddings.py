"""
Pretrained word vectors in whitespace-delimited text form ("word v1 ... vd").
"""
from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from damp.core.exceptions import EmbeddingFormatError
from damp.core.io import numbered_lines
from damp.services.vocab import PAD_ID, Vocabulary

logger = logging.getLogger("damp.embeddings")

INIT_RANGE = 0.08


@dataclass(frozen=True)
class EmbeddingTable:
    matrix: np.ndarray  # |vocab| x dim
    dim: int
    found: int = 0

    def __post_init__(self) -> None:
        if self.matrix.ndim != 2 or self.matrix.shape[1] != self.dim:
            raise ValueError("embedding matrix width must equal dim")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("embedding matrix has non-finite values")


def read_word_vectors(path: Path, dim: int, words: Iterable[str] | None = None) -> dict[str, np.ndarray]:
    """Vectors for `words` (all words when None); every line is dimension checked."""
    path = Path(path)
    if not path.is_file():
        raise EmbeddingFormatError(str(path), "-", "file not found")
    wanted = set(words) if words is not None else None
    vectors: dict[str, np.ndarray] = {}

    def undecodable(lineno: int, exc: UnicodeDecodeError) -> EmbeddingFormatError:
        return EmbeddingFormatError(str(path), "-", f"invalid UTF-8 at byte {exc.start}", line=lineno)

    for lineno, raw in numbered_lines(path, undecodable):
        parts = raw.split()
        if not parts:
            continue
        word, values = parts[0], parts[1:]
        if len(values) != dim:
            raise EmbeddingFormatError(str(path), word, f"has {len(values)} values, expected {dim}", line=lineno)
        if wanted is not None and word not in wanted:
            continue
        try:
            vector = np.array([float(v) for v in values], dtype=np.float64)
        except ValueError as exc:
            raise EmbeddingFormatError(str(path), word, "non-numeric value", line=lineno) from exc
        if not np.all(np.isfinite(vector)):
            raise EmbeddingFormatError(str(path), word, "non-finite value", line=lineno)
        vectors.setdefault(word, vector)
    return vectors


def random_table(size: int, dim: int, seed: int, init_range: float = INIT_RANGE) -> np.ndarray:
    matrix = np.random.default_rng(seed).uniform(-init_range, init_range, size=(size, dim))
    matrix[PAD_ID] = 0.0
    return matrix


def load_embeddings(path: Path, vocab: Vocabulary, dim: int, seed: int = 0) -> EmbeddingTable:
    """Rows from the file where present, seeded uniform(-0.08, 0.08) otherwise, PAD zero."""
    vectors = read_word_vectors(path, dim, words=vocab.tokens)
    table = table_from_vectors(vectors, vocab, dim, seed)
    logger.info("Embeddings: %d of %d vocabulary rows found in %s", table.found, len(vocab), Path(path).name)
    return table


def table_from_vectors(vectors: Mapping[str, np.ndarray], vocab: Vocabulary, dim: int, seed: int = 0) -> EmbeddingTable:
    matrix = random_table(len(vocab), dim, seed)
    found = 0
    for index, token in enumerate(vocab.tokens):
        if index == PAD_ID:
            continue
        vector = vectors.get(token)
        if vector is not None:
            matrix[index] = vector
            found += 1
    return EmbeddingTable(matrix=matrix, dim=dim, found=found)
