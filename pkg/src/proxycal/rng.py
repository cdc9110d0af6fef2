"""Counter-based random streams.

All randomness in the package flows through Philox generators keyed by an
integer tuple, so any draw is a pure function of its key and is reproducible
across platforms and execution order.  Components that need several
independent streams (e.g. the data generator's per-noise-source streams)
use a fixed integer sub-key per role.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(*key: int) -> np.random.Generator:
    """Return a Generator fully determined by the integer key tuple."""
    if not key:
        raise ValueError("stream requires at least one key integer")
    entropy = tuple(int(k) & _MASK64 for k in key)
    return np.random.Generator(np.random.Philox(seed=np.random.SeedSequence(entropy)))


def derive_seed(*key: int) -> int:
    """Collapse a key tuple into a single 32-bit seed, deterministically."""
    entropy = tuple(int(k) & _MASK64 for k in key)
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])
