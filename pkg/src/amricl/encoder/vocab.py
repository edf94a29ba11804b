from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

UNK = "<unk>"
PAD = "<pad>"


@dataclass(frozen=True)
class Vocabulary:
    """Token -> id map. ``<unk>`` is id 0 and ``<pad>`` is id 1."""

    itos: tuple[str, ...]
    stoi: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.itos) < 2 or self.itos[0] != UNK or self.itos[1] != PAD:
            raise ValueError("vocabulary must start with <unk>, <pad>")
        if len(set(self.itos)) != len(self.itos):
            raise ValueError("duplicate token in vocabulary")
        object.__setattr__(self, "stoi", {t: i for i, t in enumerate(self.itos)})

    @property
    def unk_id(self) -> int:
        return 0

    @property
    def pad_id(self) -> int:
        return 1

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def lookup(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, 0) for t in tokens]


def build_vocab(corpus: Iterable, min_count: int = 1) -> Vocabulary:
    """Ids by frequency (descending) then lexicographically; rare tokens map to UNK."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: Counter[str] = Counter()
    n = 0
    for lin in corpus:
        counts.update(lin.tokens)
        n += 1
    if n == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_count and t not in (UNK, PAD)),
                  key=lambda t: (-counts[t], t))
    return Vocabulary((UNK, PAD, *kept))
