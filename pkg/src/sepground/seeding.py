"""Splittable seed derivation.

Every source of randomness in the package draws from a numpy Generator
seeded through this function, so any item's stream can be reproduced
from the run seed and the item's position alone, independent of
evaluation order.
"""

from __future__ import annotations

import numpy as np


def derive_seed(*parts: int) -> int:
    """Derive a 64-bit child seed from integer parts (seed, tag, index...)."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])
