"""Deterministic per-call-site random streams."""
from __future__ import annotations

import zlib
from collections import defaultdict

import numpy as np


class RngStreams:
    """Hand out independent generators keyed by call-site name.

    Each call to :meth:`next` for a given site advances a counter, so the
    draws of one site never depend on how often other sites were used.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._counters: dict[str, int] = defaultdict(int)

    def next(self, site: str) -> np.random.Generator:
        count = self._counters[site]
        self._counters[site] = count + 1
        key = (zlib.crc32(site.encode()), count)
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))


def as_generator(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
