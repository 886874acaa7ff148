# ptyinr/rng.py
"""Counter-based, splittable random streams.

Every stochastic consumer asks for its own stream by purpose tag (and optional integer
indices such as a frame number or an epoch), so draws never depend on the order in which
other consumers ran or on how many threads exist.
"""
import zlib
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_COUNTER_SHIFT = 192


@dataclass(frozen=True)
class Rng:
    seed: int
    counter: int = 0

    def key(self, tag: str, *index: int) -> np.ndarray:
        words = [self.seed & 0xFFFFFFFF, (self.seed >> 32) & 0xFFFFFFFF, zlib.crc32(tag.encode())]
        words.extend(int(i) & 0xFFFFFFFF for i in index)
        return np.random.SeedSequence(words).generate_state(2, dtype=np.uint64)

    def stream(self, tag: str, *index: int) -> np.random.Generator:
        """Philox generator keyed by (seed, tag, index).

        `counter` sits in the top word of the Philox counter, so every counter value owns
        a disjoint block of the stream.
        """
        bit_gen = np.random.Philox(key=self.key(tag, *index), counter=(self.counter & _MASK64) << _COUNTER_SHIFT)
        return np.random.Generator(bit_gen)
