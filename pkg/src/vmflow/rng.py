"""Counter-based random number generation, always owned by the caller."""
from __future__ import annotations

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """Philox generator: reproducible, splittable, no global state."""
    return np.random.Generator(np.random.Philox(int(seed)))


def normal_f32(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.standard_normal(shape, dtype=np.float32)
