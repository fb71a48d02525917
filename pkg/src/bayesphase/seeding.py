"""Reproducible random streams.

Every random draw in the package comes from a generator obtained through
:func:`stream`. A stream is identified by a root seed plus a tuple of
string/int keys; the keys are hashed into a :class:`numpy.random.SeedSequence`
spawn key, so the same (seed, keys) pair always yields the same generator and
different keys yield statistically independent generators. Sweeps derive
per-cell, per-replica streams by appending the cell indices to the keys.
"""

import zlib

import numpy as np


def _key_to_int(key):
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("stream keys must be non-negative")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def seed_sequence(seed, *keys):
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_key_to_int(k) for k in keys))


def stream(seed, *keys):
    """Return a PCG64 generator for the stream ``(seed, *keys)``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))
