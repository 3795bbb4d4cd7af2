"""Counter-based random streams keyed by (master seed, sample index, slot).

Every Monte-Carlo draw in the toolkit goes through a :class:`StreamKey`, so a
sample's randomness depends only on its key and never on which thread
produced it or in what order samples were evaluated. The streams are numpy's
Philox generator, keyed through :class:`numpy.random.SeedSequence`.
"""

from __future__ import annotations

import dataclasses
import enum

import numpy as np

_MASK64 = (1 << 64) - 1


class Slot(enum.IntEnum):
    DATA_INDEX = 0
    NOISE_VECTOR = 1
    TIME_A = 2
    TIME_B = 3


@dataclasses.dataclass(frozen=True)
class StreamKey:
    master_seed: int
    sample_index: int
    slot: Slot

    def __post_init__(self):
        if self.sample_index < 0:
            raise ValueError(f"sample_index must be >= 0, got {self.sample_index}")


def generator(key: StreamKey) -> np.random.Generator:
    """Fresh generator for `key`; identical keys give identical streams."""
    seq = np.random.SeedSequence(
        entropy=key.master_seed & _MASK64,
        spawn_key=(key.sample_index, int(key.slot)),
    )
    return np.random.Generator(np.random.Philox(seq))


def uniform(key: StreamKey, count: int) -> np.ndarray:
    """`count` reals in [0, 1)."""
    return generator(key).random(count)


def standard_normal(key: StreamKey, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return generator(key).standard_normal(n)


def index(key: StreamKey, high: int) -> int:
    """Uniform integer in [0, high)."""
    if high < 1:
        raise ValueError(f"high must be >= 1, got {high}")
    return int(generator(key).integers(high))
