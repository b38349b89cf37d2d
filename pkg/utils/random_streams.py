"""
Reproducible random substreams.
Every stream is keyed by (seed, index, tag) so replication r draws the same
numbers whether it runs first, last, serially or on another thread.
"""

import logging
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

# Variable tags for the simulation design
TAG_Z = 0
TAG_V = 1
TAG_U = 2
# Tags for resampling / oracle chunks
TAG_BOOTSTRAP = 10
TAG_ORACLE = 20


def substream(seed: int, index: int, tag: int = 0) -> np.random.Generator:
    """
    Counter-based generator for one (seed, index, tag) key

    Args:
        seed: 64-bit master seed
        index: replication / replicate / chunk number
        tag: variable or purpose tag

    Returns:
        numpy Generator backed by Philox
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index), int(tag)))
    return np.random.Generator(np.random.Philox(sequence))


def resolve_seed(seed: Optional[int]) -> int:
    """Return seed, or draw one from OS entropy and log it"""
    if seed is not None:
        return int(seed)
    drawn = int(np.random.SeedSequence().entropy % (2 ** 63))
    logger.info(f"No seed given; using OS-entropy seed {drawn}")
    return drawn
