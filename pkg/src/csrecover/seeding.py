"""Deterministic derivation of sub-seeds for nested experiment components.

Every source of randomness in the package (operator entries, measurement
noise, Monte-Carlo probes, state-evolution draws) pulls from its own derived
seed so streams never collide and results are independent of evaluation
order.
"""

import numpy as np


def derive_seed(*parts: int) -> int:
    """Map a tuple of integers to a single 64-bit seed, deterministically."""
    state = np.random.SeedSequence([int(p) for p in parts]).generate_state(2)
    return int(state[0]) << 32 | int(state[1])


def rng_for(*parts: int) -> np.random.Generator:
    """A fresh generator seeded from the derived seed of ``parts``."""
    return np.random.default_rng(derive_seed(*parts))
