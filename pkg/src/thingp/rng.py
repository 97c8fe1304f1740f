"""Seed management: one root seed, named independent sub-streams.

Every random choice in the package (maximin first pick, simulator draws,
validation splits, ...) pulls its generator from `substream(root, name)` so a
run can be replayed component-by-component.
"""

import zlib

import numpy as np


def substream(root_seed: int, name: str) -> np.random.Generator:
    """Generator for the named sub-stream of a root seed.

    The same (root_seed, name) pair always yields an identical stream;
    different names give statistically independent streams.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(root_seed) & 0xFFFFFFFF,
                                                        spawn_key=(key,)))
