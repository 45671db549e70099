"""
Token vocabularies with fixed reserved indices.
"""
from __future__ import annotations

from collections import Counter
from collections.abc import Iterable, Sequence

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
RESERVED: tuple[str, ...] = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3


class Vocabulary:
    """Bijective token <-> index map; indices 0-3 are PAD, BOS, EOS, UNK."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._itos: list[str] = list(RESERVED)
        self._stoi: dict[str, int] = {tok: i for i, tok in enumerate(RESERVED)}
        for token in tokens:
            if token not in self._stoi:
                self._stoi[token] = len(self._itos)
                self._itos.append(token)

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, token: object) -> bool:
        return token in self._stoi

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._itos == other._itos

    def __repr__(self) -> str:
        return f"Vocabulary(size={len(self)})"

    @property
    def tokens(self) -> list[str]:
        return list(self._itos)

    def index(self, token: str) -> int:
        return self._stoi.get(token, UNK_ID)

    def token(self, index: int) -> str:
        return self._itos[index]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self._stoi.get(tok, UNK_ID) for tok in tokens]

    def decode(self, indices: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in indices:
            if strip and i in (PAD_ID, BOS_ID):
                continue
            if strip and i == EOS_ID:
                break
            out.append(self._itos[i])
        return out


def build_vocab(sequences: Iterable[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Tokens with frequency >= min_count, most frequent first, ties lexicographic."""
    counts = Counter(tok for seq in sequences for tok in seq)
    kept = sorted(
        (tok for tok, n in counts.items() if n >= min_count and tok not in RESERVED),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocabulary(kept)
