"""Deterministic seed splitting and random generator construction.

All randomness in the package flows from a single 64-bit master seed.
Independent streams (one per trajectory of an ensemble, one per
experiment stage) are derived with :func:`split_seed`, a SplitMix64
finalizer applied to ``seed + (stream_id + 1) * GOLDEN`` modulo 2**64.
SplitMix64 is a bijective mixer, so distinct ``(seed, stream_id)`` pairs
with the same seed never collide and the derived streams are
statistically independent for the Philox counter-based generator used
throughout.

Gaussian variates are drawn with ``numpy.random.Generator.standard_normal``
on top of Philox; given a fixed numpy version this mapping from seed to
sample sequence is bit-reproducible.
"""

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def split_seed(seed: int, stream_id: int) -> int:
    """Derive the 64-bit sub-seed of stream ``stream_id`` from ``seed``."""
    z = (int(seed) + (int(stream_id) + 1) * _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def make_rng(seed: int, stream_id: int | None = None) -> np.random.Generator:
    """Counter-based generator for ``seed``, optionally on a derived stream."""
    key = split_seed(seed, stream_id) if stream_id is not None else int(seed) & _MASK
    return np.random.Generator(np.random.Philox(key=key))
