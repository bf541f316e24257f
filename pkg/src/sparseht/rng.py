"""Seeded random streams.

Every random draw in the package comes from a Philox counter-based
generator keyed as Philox(key=[seed, stream]): the user-facing 64-bit seed
plus a 64-bit stream id. Streams are statistically independent, so one seed
can drive data generation, solver index sampling (stream = outer round or
chunk ordinal), and block sampling (stream = 2^63 + round) without
coordination. The derivation is part of the public contract: a fixed seed
reproduces every trace bit for bit.

Threaded solver workers use a different scheme (a per-worker splitmix64
state living inside the kernels) because generator objects cannot cross the
jit boundary; their seeding is derived deterministically from the async
seed and round index.
"""

from __future__ import annotations

import numpy as np

# stream ids for the data-generation roles
STREAM_DESIGN = 0
STREAM_TRUTH = 1
STREAM_NOISE = 2
STREAM_LABELS = 3
STREAM_CORRUPT = 4
STREAM_MEASURE = 5

# solver block sampling lives in the upper half of the stream space so it
# never collides with round-indexed gradient streams
BLOCK_STREAM_BASE = 2**63


def philox_rng(seed: int, stream: int) -> np.random.Generator:
    """Generator for the given (seed, stream) pair."""
    seed = int(seed)
    stream = int(stream)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must fit in 64 bits")
    if not 0 <= stream < 2**64:
        raise ValueError("stream must fit in 64 bits")
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
