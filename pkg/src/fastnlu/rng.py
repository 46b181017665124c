"""Deterministic random source built on splitmix64.

Every stochastic operation in the package (parameter init, dropout masks,
batch shuffling) draws from an explicit `Rng` owned by the caller, so runs
are bit-reproducible for a fixed seed regardless of the numpy version.
Draws are vectorized: the k-th output of a stream is a pure function of
(state, k), which lets us mix a whole block of counters at once.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    return z ^ (z >> _U64(31))


class Rng:
    """splitmix64 stream of uniforms, normals and permutations."""

    def __init__(self, seed: int):
        self._state = _U64(seed & 0xFFFFFFFFFFFFFFFF)

    def spawn(self, tag: int) -> "Rng":
        """Independent child stream; deterministic in (parent seed, tag)."""
        child = Rng(0)
        with np.errstate(over="ignore"):
            child._state = _mix(self._state + _U64(tag & 0xFFFFFFFFFFFFFFFF) * _MIX1)
        return child

    def raw(self, n: int) -> np.ndarray:
        """Next n raw 64-bit outputs."""
        with np.errstate(over="ignore"):
            idx = np.arange(1, n + 1, dtype=np.uint64)
            block = _mix(self._state + idx * _GOLDEN)
            self._state = self._state + _U64(n) * _GOLDEN
        return block

    def uniform(self, shape=None) -> np.ndarray | float:
        """Uniform floats in [0, 1)."""
        n = 1 if shape is None else int(np.prod(shape))
        u = (self.raw(n) >> _U64(11)) * (2.0 ** -53)
        if shape is None:
            return float(u[0])
        return u.reshape(shape)

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        """Standard Box-Muller normals scaled by `std`."""
        n = int(np.prod(shape))
        m = (n + 1) // 2
        # u1 in (0, 1] so the log is finite
        u1 = ((self.raw(m) >> _U64(11)) + _U64(1)) * (2.0 ** -53)
        u2 = (self.raw(m) >> _U64(11)) * (2.0 ** -53)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return std * z[:n].reshape(shape)

    def truncated_normal(self, shape, std: float = 1.0) -> np.ndarray:
        """Normal(0, std) with rejection outside +/- 2 std."""
        out = self.normal(shape, std=std)
        bad = np.abs(out) > 2.0 * std
        while bad.any():
            out[bad] = self.normal((int(bad.sum()),), std=std)
            bad = np.abs(out) > 2.0 * std
        return out

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic shuffle of range(n)."""
        return np.argsort(self.uniform((n,)), kind="stable")
