"""Reproducible random streams.

Every stream is a Philox-4x64 counter-based generator whose key is derived
from ``SeedSequence(seed, spawn_key=(stream_id,))``.  Streams with different
ids are statistically independent, and a stream depends only on the pair
``(seed, stream_id)``, never on how many other streams exist or in which
order they are consumed.
"""

import numpy as np


def stream(seed, stream_id=0):
    """Return the generator for ``(seed, stream_id)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.Philox(ss))


def streams(seed, count):
    return [stream(seed, i) for i in range(count)]


def split_counts(total, parts):
    """Sizes of ``parts`` contiguous slots covering ``total`` items."""
    base, extra = divmod(int(total), int(parts))
    return [base + (1 if i < extra else 0) for i in range(parts)]
