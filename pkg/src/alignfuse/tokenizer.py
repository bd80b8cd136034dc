"""Subword tokenization (greedy longest-match over a vocabulary file) and
deterministic hash-based token embedders."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ContractError
from .rng import hash_unit_vector

__all__ = ["GreedyTokenizer", "HashEmbedder"]


class GreedyTokenizer:
    """Longest-match-first splitter with a per-character fallback.

    Subword surface forms are raw substrings of the word, so concatenating
    them always recovers the original word exactly.
    """

    def __init__(self, vocab: set[str] | list[str]):
        self.vocab = {v for v in vocab if v}
        self._max_len = max((len(v) for v in self.vocab), default=0)

    @classmethod
    def from_file(cls, path: str | Path) -> "GreedyTokenizer":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls({ln.strip() for ln in lines if ln.strip()})

    def split(self, word: str) -> list[str]:
        if not word:
            raise ContractError("cannot tokenize an empty word")
        pieces: list[str] = []
        pos = 0
        while pos < len(word):
            end = min(len(word), pos + self._max_len)
            piece = None
            for stop in range(end, pos, -1):
                if word[pos:stop] in self.vocab:
                    piece = word[pos:stop]
                    break
            if piece is None:
                piece = word[pos]  # character fallback
            pieces.append(piece)
            pos += len(piece)
        return pieces


class HashEmbedder:
    """Deterministic per-token embedding: a salted hash of the token text.

    The same token always maps to the same float32 unit vector, so aligned
    outputs are reproducible without any trained text encoder.
    """

    def __init__(self, dim: int, salt: str = "text-token"):
        if dim < 1:
            raise ContractError(f"embedding dim must be >= 1, got {dim}")
        self.dim = dim
        self.salt = salt
        self._cache: dict[str, np.ndarray] = {}

    def __call__(self, token_text: str) -> np.ndarray:
        vec = self._cache.get(token_text)
        if vec is None:
            vec = hash_unit_vector(token_text, self.dim, salt=self.salt)
            self._cache[token_text] = vec
        return vec
