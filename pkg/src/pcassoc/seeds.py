"""Reproducible random streams.

Every stochastic routine in the package takes a :class:`Seed` and derives
its generators through ``numpy.random.SeedSequence`` spawn keys, so results
are bit-identical across runs and independent of thread scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

__all__ = ["Seed"]


@dataclass(frozen=True)
class Seed:
    """A 64-bit unsigned master seed."""

    value: int

    def __post_init__(self):
        if not isinstance(self.value, (int, np.integer)):
            raise DataError(f"seed must be an integer, got {type(self.value).__name__}")
        if not 0 <= int(self.value) < 2**64:
            raise DataError(f"seed must be in [0, 2**64), got {self.value}")

    def sequence(self, *key: int) -> np.random.SeedSequence:
        """Derive a child SeedSequence; distinct keys give independent streams."""
        return np.random.SeedSequence(int(self.value), spawn_key=tuple(int(k) for k in key))

    def rng(self, *key: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.sequence(*key)))

    def child(self, *key: int) -> "Seed":
        """A derived 64-bit seed; children with distinct keys are independent."""
        state = self.sequence(*key).generate_state(1, dtype=np.uint64)[0]
        return Seed(int(state))
