"""Counter-based random streams keyed by (base_seed, purpose, indices...).

Every stochastic task gets its own Philox stream derived from a
``SeedSequence`` spawn key, so results never depend on which worker
ran the task or in which order.
"""

import numpy as np

# spawn-key namespaces
DESIGN = 0
TRIAL = 1
SEARCH = 2
REPEAT = 3
DATASET = 4
HYBRID = 5
STUDY = 6


def stream(base_seed: int, *key: int) -> np.random.Generator:
    """Return an independent generator for ``key`` under ``base_seed``."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(base_seed: int, *key: int) -> int:
    """A 63-bit integer seed derived from ``base_seed`` and ``key``."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
