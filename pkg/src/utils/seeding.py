"""
Seeded random streams.

Every stream is numpy's PCG64 bit generator seeded through a SeedSequence
built from an entropy tuple (seed, *index). Streams for item i do not depend
on how many other items were drawn before, so per-item work can run in any
order or in parallel and still reproduce bit-exactly across platforms.
"""
import numpy as np


def make_rng(seed: int, *index: int) -> np.random.Generator:
    """PCG64 generator for (seed, index...)"""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, index)])))


def derive_seed(seed: int, *index: int) -> int:
    """Stable 32-bit sub-seed for (seed, index...)"""
    return int(np.random.SeedSequence([int(seed), *map(int, index)]).generate_state(1)[0])
