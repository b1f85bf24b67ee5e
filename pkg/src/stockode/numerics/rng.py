"""Seeded random source with deterministic per-subsystem fan-out."""

from __future__ import annotations

import zlib

import numpy as np


class Rng:
    """Thin wrapper over a PCG64 generator.

    ``spawn(name)`` derives an independent child stream from ``(seed, name)``
    so that adding draws in one subsystem never perturbs another.
    """

    def __init__(self, seed: int, _key: tuple = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._key = _key
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, *_key])))

    def spawn(self, name: str) -> "Rng":
        return Rng(self.seed, self._key + (zlib.crc32(name.encode("utf-8")),))

    def normal(self, shape=(), loc: float = 0.0, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(loc, scale, size=shape)

    def uniform(self, low: float, high: float, shape=()) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def get_state(self) -> dict:
        return {"seed": self.seed, "key": list(self._key),
                "bit_generator": self._gen.bit_generator.state}

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        rng = cls(state["seed"], tuple(state["key"]))
        rng._gen.bit_generator.state = state["bit_generator"]
        return rng
