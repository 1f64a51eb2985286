"""Reproducible random streams.

Every stream is derived from one 64-bit master seed plus a tuple of integer
keys (episode index, trial index, role tag, ...).  Two streams with different
key tuples are statistically independent, and a stream depends only on its
keys, never on how many other streams were drawn before it.
"""

from __future__ import annotations

import numpy as np

# role tags used as the last key component
PLANNER = 1
ENVIRONMENT = 2
SECRET = 3
SOLVER = 4


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Return an independent Philox generator for ``(seed, *keys)``."""
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def child(rng: np.random.Generator, *keys: int) -> np.random.Generator:
    """Derive a keyed sub-stream from an existing generator's seed sequence."""
    ss = rng.bit_generator.seed_seq
    if not isinstance(ss, np.random.SeedSequence):
        raise TypeError("generator was not built from a SeedSequence")
    sub = np.random.SeedSequence(
        entropy=ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(int(k) for k in keys)
    )
    return np.random.Generator(np.random.Philox(sub))
