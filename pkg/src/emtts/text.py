"""Character vocabulary and tokenization."""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from typing import Iterable

PAD = "<pad>"
EOS = "<eos>"


class UnknownSymbolError(ValueError):
    def __init__(self, symbols: Iterable[str]):
        self.symbols = sorted(set(symbols))
        super().__init__("symbols not in vocabulary: " + " ".join(repr(s) for s in self.symbols))


def normalize_text(text: str) -> str:
    text = unicodedata.normalize("NFC", text)
    return " ".join(text.split())


@dataclass
class Vocabulary:
    """Ordered symbols; index 0 is PAD and index 1 is EOS."""

    symbols: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.symbols[:2] != [PAD, EOS]:
            self.symbols = [PAD, EOS] + [s for s in self.symbols if s not in (PAD, EOS)]
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("duplicate vocabulary symbols")
        self.index = {s: i for i, s in enumerate(self.symbols)}

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        chars = sorted({c for t in texts for c in normalize_text(t)})
        return cls([PAD, EOS] + chars)

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def eos_id(self) -> int:
        return 1

    def encode(self, text: str) -> list[int]:
        """Characters of the normalized text followed by EOS."""
        text = normalize_text(text)
        if not text:
            raise ValueError("text is empty after normalization")
        missing = [c for c in text if c not in self.index]
        if missing:
            raise UnknownSymbolError(missing)
        return [self.index[c] for c in text] + [self.eos_id]

    def decode(self, ids: Iterable[int]) -> str:
        return "".join(self.symbols[i] for i in ids if i > 1)
