"""Seed derivation.

All randomness comes from numpy's PCG64 bit generator. A run seed is never
used directly: every consumer asks for ``derive(seed, *keys)``, which feeds
the seed and a tuple of integer keys into a ``SeedSequence``. Items that
derive their own generator from their index are therefore identical whether
they are produced serially, in parallel, or in a different order.
"""

from __future__ import annotations

import zlib

import numpy as np

GRAMMAR_VERSION = 1


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    return int(k)


def derive(seed: int, *keys) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_int(seed: int, *keys) -> int:
    return int(derive(seed, *keys).integers(0, 2**31 - 1))
