"""Named, reproducible random-number streams.

Each stream is keyed by (purpose, subject) and seeded from
(master seed, run index, purpose, subject) only, so policy variants sharing
a master seed draw identical numbers for the same donor -- the common
random numbers that make paired policy comparisons work.

Scalar uniforms come from stdlib Mersenne Twister generators (cheap to
construct, stable across platforms); numpy Generators are used where array
or weighted-choice APIs are needed.
"""

from __future__ import annotations

import hashlib
import random

import numpy as np


def derive_seed_words(*parts) -> list[int]:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 32, 4)]


def run_seed(master_seed: int, run_index: int) -> int:
    """Scalar per-run seed derived from (master seed, run index)."""
    words = derive_seed_words("run", master_seed, run_index)
    return (words[0] << 32) | words[1]


class RngStreams:
    """Factory and cache for named substreams within one run."""

    def __init__(self, master_seed: int, run_index: int = 0):
        self.master_seed = master_seed
        self.run_index = run_index
        self._uniform: dict[tuple[str, str], random.Random] = {}
        self._numpy: dict[tuple[str, str], np.random.Generator] = {}

    def _seed_digest(self, purpose: str, subject: str) -> bytes:
        key = f"{self.master_seed}|{self.run_index}|{purpose}|{subject}"
        return hashlib.sha256(key.encode()).digest()

    def uniform(self, purpose: str, subject: str = "") -> float:
        """One U(0,1) draw from the named stream, bounded away from 0."""
        key = (purpose, subject)
        gen = self._uniform.get(key)
        if gen is None:
            gen = random.Random(int.from_bytes(self._seed_digest(purpose, subject)[:16], "little"))
            self._uniform[key] = gen
        u = gen.random()
        return u if u > 0.0 else 5e-324

    def stream(self, purpose: str, subject: str = "") -> np.random.Generator:
        key = (purpose, subject)
        gen = self._numpy.get(key)
        if gen is None:
            digest = self._seed_digest(purpose, subject)
            words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 32, 4)]
            gen = np.random.default_rng(np.random.SeedSequence(words))
            self._numpy[key] = gen
        return gen
