"""Deterministic randomness: named sub-streams, counter-based dropout, token hash vectors.

Every random draw in the package flows from a single root seed through
`substream`, so runs are reproducible bit-for-bit across processes and
platforms (Philox is counter-based and platform-independent).
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed", "substream", "hash_unit_vector", "DropoutRng"]


def derive_seed(seed: int, *labels: object) -> int:
    """Derive a child seed from a root seed and a label path (stable across runs)."""
    text = str(int(seed)) + "".join(f"/{label}" for label in labels)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, *labels: object) -> np.random.Generator:
    """A fresh counter-based generator for the named sub-stream of `seed`."""
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *labels)))


def hash_unit_vector(text: str, dim: int, salt: str = "") -> np.ndarray:
    """Deterministic float32 unit vector keyed by (salt, text).

    Used as a stand-in embedding for tokens and words: the same text always
    maps to the same direction, distinct texts to nearly-orthogonal ones.
    """
    key = int.from_bytes(
        hashlib.sha256(f"{salt}\x00{text}".encode("utf-8")).digest()[:8], "little"
    )
    gen = np.random.Generator(np.random.Philox(key=key))
    vec = gen.standard_normal(dim)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:  # astronomically unlikely, but keep the contract total
        vec[0] = 1.0
        norm = 1.0
    return (vec / norm).astype(np.float32)


class DropoutRng:
    """Counter-based mask source: call `i` of seed `s` is Philox(key=[s, i]).

    Replaying a forward pass with the same seed and starting counter yields
    bit-identical masks regardless of what ran before.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter)

    def next_uniform(self, shape: tuple[int, ...]) -> np.ndarray:
        key = np.array([self.seed, self.counter], dtype=np.uint64)
        self.counter += 1
        gen = np.random.Generator(np.random.Philox(key=key))
        return gen.random(shape, dtype=np.float32)
