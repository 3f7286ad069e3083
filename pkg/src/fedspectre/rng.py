"""Seeded random streams.

Every random draw in the package comes from a PCG64 generator derived from a
root seed and a tuple of integer stream keys through ``numpy.random.SeedSequence``.
PCG64 output is specified bit-for-bit, so runs reproduce across platforms.

Stream keys used by the package (first element):

    0  model initialisation
    1  data synthesis
    2  splitting / sharding
    3  client minibatch shuffling  (participant id, round)
    4  client selection            (round)
    5  adversary draws             (participant id, round)
"""

from __future__ import annotations

import zlib

import numpy as np

INIT, SYNTH, SPLIT, SHUFFLE, SELECT, ADVERSARY = range(6)


def make_rng(seed: int, *stream: int | str) -> np.random.Generator:
    """Return an independent generator for ``(seed, *stream)``.

    String keys are hashed with CRC32 so callers can name streams.
    """
    key = tuple(zlib.crc32(s.encode()) if isinstance(s, str) else int(s) for s in stream)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))
