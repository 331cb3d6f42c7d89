"""Portable seeded random streams.

All randomness goes through Philox (a counter-based generator) keyed by a
``SeedSequence`` built from the user seed plus integer stream labels, so
that a per-speaker stream never depends on how work is scheduled.  Normal
variates use the inverse CDF rather than numpy's ziggurat so the mapping
from raw 64-bit words to values is fixed and easy to reproduce elsewhere.
"""

import zlib

import numpy as np
from scipy.special import ndtri

_TWO_53 = float(2**53)


def stream(seed, *labels):
    """Return a generator for the stream identified by ``(seed, *labels)``."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(x) & 0xFFFFFFFFFFFFFFFF for x in labels]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def label_of(text):
    """Stable integer label for a string key (CRC-32 of its UTF-8 bytes)."""
    return zlib.crc32(text.encode("utf-8"))


def uniform_open(gen, size):
    """Uniforms strictly inside (0, 1) with 53-bit resolution."""
    raw = gen.integers(0, 2**53, size=size, dtype=np.int64)
    return (raw.astype(np.float64) + 0.5) / _TWO_53


def standard_normal(gen, size):
    return ndtri(uniform_open(gen, size))


def permutation(gen, n):
    return gen.permutation(n)
