"""Seeded, splittable random streams.

Every stochastic operation receives an explicit ``numpy.random.Generator``.
Streams are derived from a root seed plus a path of keys, so that e.g. the
dropout stream of epoch 3 is independent of how many numbers the shuffle
stream consumed.
"""
import zlib

import numpy as np


def _key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def make_rng(seed, *path):
    """Return a Philox-backed generator for ``seed`` and the stream ``path``.

    >>> a = make_rng(7, "dropout", 3).random()
    >>> b = make_rng(7, "dropout", 3).random()
    >>> a == b
    True
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
