"""Deterministic random-stream plumbing.

Every stochastic routine in the package receives an :class:`RngStream`
rather than a bare generator.  A stream is a (seed, key) pair; child
streams are derived by extending the key, so the full tree of random
numbers used by an experiment is a pure function of the root seed.
Distinct keys map to statistically independent generators via numpy's
``SeedSequence`` spawning mechanism.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Fixed purpose tags used when the harness derives child streams.
DATA = 0
CHAIN = 1
CONDITIONS = 2
COVERAGE = 3
SWEEP = 4
METRICS = 5


@dataclass(frozen=True)
class RngStream:
    """Reproducible, hierarchically splittable random stream."""

    seed: int
    key: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must fit in 64 bits")

    @property
    def stream_index(self) -> int:
        return self.key[-1] if self.key else 0

    def child(self, *indices: int) -> "RngStream":
        """Derive an independent sub-stream."""
        return RngStream(self.seed, self.key + tuple(int(i) for i in indices))

    def generator(self) -> np.random.Generator:
        """Fresh generator; repeated calls restart the identical sequence."""
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        return np.random.Generator(np.random.PCG64(ss))
