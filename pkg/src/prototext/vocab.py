"""Token-to-index vocabulary shared by the trainable models.

The reserved layout tokens always occupy the first six ids, in a fixed
order; content tokens follow in sorted order, so vocabulary layout is a
pure function of the token set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .tokenization import BOS, EOS, RESERVED_TOKENS, SEP, UNK


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index: dict[str, int]

    @classmethod
    def build(cls, token_streams: Iterable[Iterable[str]]) -> "Vocabulary":
        content: set[str] = set()
        for stream in token_streams:
            content.update(stream)
        content -= set(RESERVED_TOKENS)
        tokens = tuple(RESERVED_TOKENS) + tuple(sorted(content))
        return cls(tokens=tokens, index={t: i for i, t in enumerate(tokens)})

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocabulary":
        toks = tuple(tokens)
        return cls(tokens=toks, index={t: i for i, t in enumerate(toks)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        """Index of a token, falling back to ``<unk>`` when absent."""
        idx = self.index.get(token)
        if idx is not None:
            return idx
        return self.index[UNK]

    def ids(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    @property
    def sep_id(self) -> int:
        return self.index[SEP]

    @property
    def bos_id(self) -> int:
        return self.index[BOS]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]
