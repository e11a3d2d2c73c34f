"""Named, replayable random-number streams.

Every stochastic component draws from its own stream so that a single root
seed replays an entire study.  Streams are derived from
``numpy.random.SeedSequence(seed, spawn_key=(stream_id, *key))``, which makes
substreams independent of execution order and thread count.
"""

from __future__ import annotations

import numpy as np

# Stream identifiers.  Keep stable: changing them changes every result.
POPULATION = 0
ASSIGNMENT = 1
PERMUTATION = 2
REFDIST = 3


def stream(seed: int, stream_id: int, *key: int) -> np.random.Generator:
    """Return the generator for one named (sub)stream of a root seed.

    Parameters
    ----------
    seed : int
        Root seed of the study.
    stream_id : int
        One of the module-level stream constants.
    *key : int
        Optional extra indices, e.g. the replication number.
    """
    ss = np.random.SeedSequence(seed, spawn_key=(stream_id, *key))
    return np.random.Generator(np.random.PCG64(ss))
