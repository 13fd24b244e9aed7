"""Buffered uniform streams and reproducible per-run substreams."""
from __future__ import annotations

import numpy as np

BLOCK = 256


def substream(seed: int, run_index: int, *key: int) -> np.random.Generator:
    """Generator for run ``run_index`` of an experiment seeded with ``seed``.

    Derived from (seed, run_index, *key) alone, so results never depend on
    which worker executes the run.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, run_index, *key])))


class Stream:
    """Uniform(0, 1) draws served from blocks of a numpy Generator.

    The compiled kernels and their Python mirror consume the same blocks in
    the same order, which is what makes their trajectories bit-identical.
    """

    __slots__ = ("generator", "_buf", "_pos", "block")

    def __init__(self, generator: np.random.Generator, block: int = BLOCK):
        self.generator = generator
        self.block = block
        self._buf: list[float] = []
        self._pos = 0

    @classmethod
    def from_seed(cls, seed: int, run_index: int = 0) -> "Stream":
        return cls(substream(seed, run_index))

    @classmethod
    def coerce(cls, rng) -> "Stream":
        if isinstance(rng, Stream):
            return rng
        if isinstance(rng, np.random.Generator):
            return cls(rng)
        return cls.from_seed(int(rng))

    def refill(self) -> np.ndarray:
        arr = self.generator.random(self.block)
        self._buf = arr.tolist()
        self._pos = 0
        return arr

    def uniform(self) -> float:
        if self._pos >= len(self._buf):
            self.refill()
        u = self._buf[self._pos]
        self._pos += 1
        return u

    # the compiled kernel takes over the buffer and hands back its position
    def export_state(self) -> tuple[list, int]:
        return self._buf, self._pos

    def import_state(self, buf, pos: int) -> None:
        self._buf = buf if isinstance(buf, list) else list(buf)
        self._pos = pos
