"""Named random substreams derived from the single run seed.

Every randomness source in a run (weight init, crop sampling, data order)
draws from its own named stream so ablations can hold one source fixed
while varying another.
"""

import zlib

import numpy as np


def substream(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Independent generator for (seed, name, indices).

    Extra indices key per-epoch or per-sample streams, e.g.
    ``substream(seed, "crop", epoch, sample_index)``.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key, *map(int, indices)]))
