"""Deterministic word-level tokenizer with a fixed special-token header.

Text is lowercased and split into alphanumeric runs (apostrophes kept, so
"don't" stays one token) and single punctuation marks. The vocabulary file
is UTF-8, one token per line, line number = id; the five specials always
occupy ids 0-4.
"""

from __future__ import annotations

import re
from pathlib import Path

_TOKEN_RE = re.compile(r"[a-z0-9']+|[^a-z0-9'\s]")

PAD, UNK, BOS, SEP, EOS = "[PAD]", "[UNK]", "[BOS]", "[SEP]", "[EOS]"
SPECIALS = (PAD, UNK, BOS, SEP, EOS)


def tokenize(text: str) -> list[str]:
    """Split lowercased text into word and punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


class Tokenizer:
    """Maps tokens to ids over a fixed vocabulary."""

    def __init__(self, words):
        self.tokens = list(SPECIALS) + list(words)
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate tokens")
        self.ids = {t: i for i, t in enumerate(self.tokens)}
        self.pad_id, self.unk_id, self.bos_id, self.sep_id, self.eos_id = range(5)

    @classmethod
    def build(cls, texts) -> "Tokenizer":
        """Build a vocabulary from an iterable of texts, words sorted for determinism."""
        words = set()
        for text in texts:
            words.update(tokenize(text))
        return cls(sorted(words))

    def __len__(self):
        return len(self.tokens)

    def has(self, token: str) -> bool:
        """True if the (already lowercased) token is a known non-special word."""
        i = self.ids.get(token)
        return i is not None and i >= len(SPECIALS)

    def encode(self, text: str) -> list[int]:
        """Token ids for the text; unknown tokens map to [UNK]. No specials added."""
        return [self.ids.get(t, self.unk_id) for t in tokenize(text)]

    def save(self, path):
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Tokenizer":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[:5]) != SPECIALS:
            raise ValueError(f"vocabulary file {path} does not start with the five reserved specials")
        return cls(lines[5:])
