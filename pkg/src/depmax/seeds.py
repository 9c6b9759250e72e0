"""Named, reproducible RNG streams.

Every source of randomness in a run derives from a single integer seed
through a named stream, so parallel and serial schedules draw identical
values and two runs with the same seed are bitwise-identical.
"""

from __future__ import annotations

import numpy as np

# Fixed stream ids; never renumber, checkpoints and logs depend on them.
MODEL_INIT = 1
SHUFFLE = 2
AUGMENT = 3
SYNTHETIC = 4
FEATURE_AUGMENT = 5
PROBE = 6
TEACHER = 7


def stream(seed: int, purpose: int, *indices: int) -> np.random.Generator:
    """Generator for (seed, purpose, indices...), independent of call order."""
    key = (purpose,) + tuple(int(i) for i in indices)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    """Reference shuffle order for epoch `epoch`: permutation of range(n)."""
    return stream(seed, SHUFFLE, epoch).permutation(n)
