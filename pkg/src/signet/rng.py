"""Seeded, platform-stable random streams.

Randomness flows from (seed, stream) pairs driving a counter-based Philox
engine. Uniforms come from the top 53 bits of each raw word; normals go
through the inverse normal CDF, so the whole chain is a deterministic function
of the pair and the call order. Packed Rademacher draws use raw words directly
as 64 sign bits, with no float path at all.

A stream is single-consumer: parallel or structurally separate work derives
child streams with derive() rather than sharing one.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

from .bits import BitMatrix, _tail_mask, words_per_row

__all__ = ["RngStream", "gauss_matrix", "rademacher_matrix"]

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    # Steele et al. mixing function; full-period permutation of Z/2^64
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class RngStream:
    """One consumable random stream identified by (seed, stream id)."""

    __slots__ = ("seed", "stream", "_bg")

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self._bg = None

    def _bitgen(self):
        if self._bg is None:
            key = np.array([self.seed, self.stream], dtype=np.uint64)
            self._bg = np.random.Philox(key=key)
        return self._bg

    def derive(self, *keys: int) -> "RngStream":
        """A fresh, statistically independent stream addressed by keys.

        Deterministic: the same (seed, stream, keys) always yields the same
        child. Used to split work (per layer, per trial) without sharing.
        """
        h = self.stream
        for k in keys:
            h = _splitmix64(h ^ _splitmix64(int(k) & _MASK64))
        return RngStream(self.seed, h)

    def raw(self, n: int) -> np.ndarray:
        """Next n raw 64-bit words."""
        return self._bitgen().random_raw(n)

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in the open interval (0, 1)."""
        w = self.raw(n)
        return (w >> np.uint64(11)).astype(np.float64) * 2.0**-53 + 2.0**-54

    def normal(self, shape) -> np.ndarray:
        """Standard normal draws via the inverse CDF, row-major order."""
        if np.isscalar(shape):
            shape = (int(shape),)
        count = int(np.prod(shape)) if shape else 1
        return ndtri(self.uniform(count)).reshape(shape)

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n integers uniform on [0, bound) by rejection-free modular masking.

        Uses rejection sampling on masked raw words, so the distribution is
        exactly uniform and the draw count is data-dependent but deterministic.
        """
        if bound < 1:
            raise ValueError("bound must be >= 1")
        nbits = max(1, int(bound - 1).bit_length())
        mask = np.uint64((1 << nbits) - 1)
        out = np.empty(n, dtype=np.int64)
        filled = 0
        while filled < n:
            cand = (self.raw(2 * (n - filled)) & mask).astype(np.int64)
            cand = cand[cand < bound]
            take = min(cand.size, n - filled)
            out[filled : filled + take] = cand[:take]
            filled += take
        return out

    def choice_no_replace(self, pool: int, k: int) -> np.ndarray:
        """k distinct indices from range(pool), order-insensitive use only."""
        if k > pool:
            raise ValueError("cannot draw more than pool without replacement")
        if k == 0:
            return np.empty(0, dtype=np.int64)
        # Floyd's algorithm keeps the draw count at k even for large pools
        chosen = set()
        out = np.empty(k, dtype=np.int64)
        for i, j in enumerate(range(pool - k, pool)):
            t = int(self.integers(1, j + 1)[0])
            if t in chosen:
                t = j
            chosen.add(t)
            out[i] = t
        return out


def gauss_matrix(rng: RngStream, rows: int, cols: int) -> np.ndarray:
    """(rows, cols) of i.i.d. standard normals, reproducible from the stream."""
    if rows < 1 or cols < 1:
        raise ValueError("matrix extents must be >= 1")
    return rng.normal((rows, cols))


def rademacher_matrix(rng: RngStream, rows: int, cols: int) -> BitMatrix:
    """Packed (rows, cols) of i.i.d. +-1 bits taken from raw words."""
    if rows < 1 or cols < 1:
        raise ValueError("matrix extents must be >= 1")
    nw = words_per_row(cols)
    words = rng.raw(rows * nw).reshape(rows, nw).copy()
    words[:, -1] &= _tail_mask(cols)
    return BitMatrix(rows, cols, words)
