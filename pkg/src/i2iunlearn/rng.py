"""Portable splitmix64 generator.

Every stochastic choice in the package (data jitter, weight init, noise
targets, shuffling) draws from one of these, seeded explicitly per component.
Output k of a stream seeded with ``s`` is ``mix(s + k * GAMMA)``, so a block of
draws can be produced vectorised and still match the sequential definition.
"""

from __future__ import annotations

import zlib

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, tag: str) -> int:
    """Independent child seed for a named component (``"init"``, ``"data"``, ...)."""
    z = (int(seed) ^ (zlib.crc32(tag.encode()) << 32)) & _MASK
    with np.errstate(over="ignore"):
        return int(_mix(np.array([z], dtype=np.uint64) + GAMMA)[0])


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next_u64(self, n: int) -> np.ndarray:
        k = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            out = _mix(np.uint64(self.state) + k * GAMMA)
        self.state = (self.state + n * int(GAMMA)) & _MASK
        return out

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """``n`` doubles in ``[low, high)`` with 53 random bits each."""
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return low + (high - low) * u

    def normal(self, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        # Box-Muller on pairs; the sine half of the last pair is dropped when n is odd.
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform(m)
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return mean + std * z[:n]

    def integers(self, n: int, high: int) -> np.ndarray:
        """``n`` integers in ``[0, high)``."""
        return np.minimum((self.uniform(n) * high).astype(np.int64), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable")
