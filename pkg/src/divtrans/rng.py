"""Keyed, counter-based random streams.

Every stochastic choice in the package draws from a Philox generator whose
key is derived from a tuple such as ``(seed, sentence_id, decode_index)``.
Streams therefore never depend on scheduling or worker count.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``."""
    words = [int(seed) & _MASK64] + [int(k) & _MASK64 for k in keys]
    ss = np.random.SeedSequence(words)
    return np.random.Generator(np.random.Philox(ss))


def clone(gen: np.random.Generator) -> np.random.Generator:
    """Copy of ``gen`` that continues from the same counter position."""
    bg = np.random.Philox()
    bg.state = gen.bit_generator.state
    return np.random.Generator(bg)
