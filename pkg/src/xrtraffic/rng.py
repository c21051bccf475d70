"""Seedable random streams.

All randomness comes from numpy's PCG64 seeded through ``SeedSequence``.
Substreams are addressed by a tuple of small integers (the spawn key), so a
given ``(seed, key)`` pair always yields the same stream no matter how many
other streams exist or in which order they are consumed.

Key layout used across the package:

* ``(0,)`` frame sizes of a synthesized trace
* ``(1,)`` inter-frame intervals of a synthesized trace
* ``(2,)`` simulator start offsets, one draw per flow in flow order
* ``(3, i)`` derivation of the trace seed for simulator flow ``i``
"""

from __future__ import annotations

import numpy as np

SIZE_STREAM = 0
IFI_STREAM = 1
OFFSET_STREAM = 2
FLOW_SEED_STREAM = 3

MAX_SEED = 2**64 - 1


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def substream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=check_seed(seed), spawn_key=tuple(key))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *key: int) -> int:
    """A 64-bit seed for a child component, stable under ``(seed, key)``."""
    ss = np.random.SeedSequence(entropy=check_seed(seed), spawn_key=tuple(key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
