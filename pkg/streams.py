"""
MCVR RANDOM STREAMS
Counter-style stream derivation: (seed, stream id, block) -> Philox generator
"""

from enum import IntEnum

import numpy as np

# Trials per block; the (trial, render, stratum) element is a fixed position in
# the block's arrays. Changing this changes every seeded result.
BLOCK_SIZE = 256


class Stream(IntEnum):
    ESTIMATES = 1
    REFERENCE = 2
    ORACLE = 3
    ATTRIBUTION = 4
    PAIR_INSTANCES = 5
    CELLS = 6
    FIELD = 8


def generator(seed: int, stream: int, block: int = 0) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(block)))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, index: int, stream: int = Stream.CELLS) -> int:
    """64-bit child seed for grid cell / repetition `index`"""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(index)))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def block_of(trial: int) -> tuple:
    """(block index, row within block)"""
    return divmod(int(trial), BLOCK_SIZE)
