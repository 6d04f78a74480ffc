"""Packed sign vectors and matrices with exact XOR/popcount kernels.

Packing contract (also the on-disk layout): 64-bit words, LSB-first within a
word, +1 encoded as bit 1 and -1 as bit 0, row-major rows, padding bits in the
final word of each row held at zero. Zero input to sign_pack maps to +1.

The word-level XOR and popcount kernels here are the inference engine of the
binary models; the module keeps an opt-in operation counter so cost accounting
can be cross-checked against an actual forward pass.
"""

from __future__ import annotations

import sys
from contextlib import contextmanager

import numpy as np

__all__ = [
    "WORD_BITS",
    "BitVector",
    "BitMatrix",
    "sign_pack",
    "sign_pack_matrix",
    "pack_bool_matrix",
    "unpack",
    "unpack_matrix",
    "bip",
    "bip_rows",
    "hamming",
    "signed_bitmat_vec",
    "flip_matrix_bits",
    "counters",
    "words_per_row",
]

WORD_BITS = 64
_ALL_ONES = np.uint64(0xFFFF_FFFF_FFFF_FFFF)

if sys.byteorder != "little":  # pragma: no cover
    raise ImportError("bit packing assumes a little-endian platform")


def words_per_row(nbits: int) -> int:
    return (nbits + WORD_BITS - 1) // WORD_BITS


def _tail_mask(nbits: int) -> np.uint64:
    tail = nbits % WORD_BITS
    if tail == 0:
        return _ALL_ONES
    return np.uint64((1 << tail) - 1)


class OpCounters:
    """Word-level operation tally, enabled only inside a counting() block.

    xor_words / popcount_words count 64-bit word operations in the packed
    kernels; int_adds counts elementwise signed accumulations; sign_evals
    counts scalar sign decisions made while packing.
    """

    __slots__ = ("enabled", "xor_words", "popcount_words", "int_adds", "sign_evals")

    def __init__(self):
        self.enabled = False
        self.reset()

    def reset(self):
        self.xor_words = 0
        self.popcount_words = 0
        self.int_adds = 0
        self.sign_evals = 0

    @contextmanager
    def counting(self):
        self.reset()
        self.enabled = True
        try:
            yield self
        finally:
            self.enabled = False


counters = OpCounters()


def _pack_bool(bools: np.ndarray) -> np.ndarray:
    """Pack a bool array along its last axis into LSB-first uint64 words."""
    nbits = bools.shape[-1]
    packed = np.packbits(bools, axis=-1, bitorder="little")
    target = words_per_row(nbits) * 8
    if packed.shape[-1] != target:
        pad = np.zeros(bools.shape[:-1] + (target - packed.shape[-1],), dtype=np.uint8)
        packed = np.concatenate([packed, pad], axis=-1)
    return np.ascontiguousarray(packed).view(np.uint64)


def _unpack_words(words: np.ndarray, nbits: int) -> np.ndarray:
    bits = np.unpackbits(words.view(np.uint8), axis=-1, bitorder="little")
    return bits[..., :nbits].astype(np.float64) * 2.0 - 1.0


class BitVector:
    """Packed +-1 vector of a fixed bit length."""

    __slots__ = ("length", "words")

    def __init__(self, length: int, words: np.ndarray):
        if length < 1:
            raise ValueError("BitVector length must be >= 1")
        words = np.asarray(words, dtype=np.uint64)
        if words.shape != (words_per_row(length),):
            raise ValueError("word buffer does not match length")
        if int(words[-1] & ~_tail_mask(length)):
            raise ValueError("padding bits must be zero")
        self.length = length
        self.words = words

    def __eq__(self, other):
        return (
            isinstance(other, BitVector)
            and self.length == other.length
            and np.array_equal(self.words, other.words)
        )

    def __hash__(self):  # pragma: no cover
        return hash((self.length, self.words.tobytes()))

    def copy(self) -> "BitVector":
        return BitVector(self.length, self.words.copy())


class BitMatrix:
    """Packed +-1 matrix; each row uses the BitVector layout."""

    __slots__ = ("rows", "cols", "words")

    def __init__(self, rows: int, cols: int, words: np.ndarray):
        if rows < 1 or cols < 1:
            raise ValueError("BitMatrix extents must be >= 1")
        words = np.asarray(words, dtype=np.uint64)
        if words.shape != (rows, words_per_row(cols)):
            raise ValueError("word buffer does not match extents")
        if np.any(words[:, -1] & ~_tail_mask(cols)):
            raise ValueError("padding bits must be zero")
        self.rows = rows
        self.cols = cols
        self.words = words

    def row(self, i: int) -> BitVector:
        # shares the underlying words; rows are treated as immutable
        return BitVector(self.cols, self.words[i])

    def __eq__(self, other):
        return (
            isinstance(other, BitMatrix)
            and self.rows == other.rows
            and self.cols == other.cols
            and np.array_equal(self.words, other.words)
        )

    def __hash__(self):  # pragma: no cover
        return hash((self.rows, self.cols, self.words.tobytes()))

    def copy(self) -> "BitMatrix":
        return BitMatrix(self.rows, self.cols, self.words.copy())

    @property
    def bit_count(self) -> int:
        """Logical bits (padding excluded)."""
        return self.rows * self.cols


def sign_pack(v) -> BitVector:
    """Pack sign(v) with sign(0) = +1: bit i is 1 iff v[i] >= 0."""
    arr = np.asarray(v)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("sign_pack expects a nonempty 1-D vector")
    if counters.enabled:
        counters.sign_evals += arr.size
    return BitVector(arr.size, _pack_bool(arr >= 0))


def sign_pack_matrix(a) -> BitMatrix:
    """Row-wise sign_pack of a 2-D array."""
    arr = np.asarray(a)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("sign_pack_matrix expects a nonempty 2-D array")
    if counters.enabled:
        counters.sign_evals += arr.size
    return BitMatrix(arr.shape[0], arr.shape[1], _pack_bool(arr >= 0))


def pack_bool_matrix(b) -> BitMatrix:
    """Pack a 2-D bool array (True -> +1)."""
    arr = np.asarray(b, dtype=bool)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("pack_bool_matrix expects a nonempty 2-D array")
    return BitMatrix(arr.shape[0], arr.shape[1], _pack_bool(arr))


def unpack(bv: BitVector) -> np.ndarray:
    """Unpack to a float64 +-1 vector."""
    return _unpack_words(bv.words, bv.length)


def unpack_matrix(bm: BitMatrix) -> np.ndarray:
    """Unpack to a float64 +-1 matrix."""
    return _unpack_words(bm.words, bm.cols)


def _xor_popcount(words_a: np.ndarray, words_b: np.ndarray) -> int:
    x = np.bitwise_xor(words_a, words_b)
    if counters.enabled:
        counters.xor_words += x.size
        counters.popcount_words += x.size
    return int(np.bitwise_count(x).sum())


def bip(a: BitVector, b: BitVector) -> int:
    """Exact +-1 inner product: N - 2 * popcount(a XOR b)."""
    if a.length != b.length:
        raise ValueError("bip requires equal lengths")
    return a.length - 2 * _xor_popcount(a.words, b.words)


def hamming(a: BitVector, b: BitVector) -> int:
    """Number of disagreeing coordinates."""
    if a.length != b.length:
        raise ValueError("hamming requires equal lengths")
    return _xor_popcount(a.words, b.words)


def bip_rows(bm: BitMatrix, bv: BitVector) -> np.ndarray:
    """bip of every matrix row against bv, as an int64 vector."""
    if bm.cols != bv.length:
        raise ValueError("bip_rows requires matching lengths")
    x = np.bitwise_xor(bm.words, bv.words[None, :])
    if counters.enabled:
        counters.xor_words += x.size
        counters.popcount_words += x.size
    ham = np.bitwise_count(x).sum(axis=1).astype(np.int64)
    return bm.cols - 2 * ham


def signed_bitmat_vec(r: BitMatrix, z) -> np.ndarray:
    """Exact signed mat-vec: entry i is sum_j R[i,j] * z[j] with R in {-1,+1}.

    Computed through a float64 product, which is exact while every partial sum
    stays below 2^53; callers here keep |z| well under 2^31 with row lengths
    under 2^20, far inside that envelope.
    """
    z = np.asarray(z)
    if z.ndim != 1 or z.size != r.cols:
        raise ValueError("vector length must equal matrix cols")
    if counters.enabled:
        counters.int_adds += r.rows * r.cols
    out = unpack_matrix(r) @ z.astype(np.float64)
    return out.astype(np.int64)


def flip_matrix_bits(bm: BitMatrix, indices) -> BitMatrix:
    """Return a copy of bm with the given logical bits inverted.

    Indices address bits row-major over (rows x cols), padding excluded.
    XOR semantics: an index listed twice flips back; callers pass distinct
    indices.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= bm.bit_count):
        raise ValueError("bit index out of range")
    words = bm.words.copy()
    if idx.size:
        row_idx = idx // bm.cols
        col_idx = idx % bm.cols
        word_idx = col_idx // WORD_BITS
        masks = np.left_shift(np.uint64(1), (col_idx % WORD_BITS).astype(np.uint64))
        np.bitwise_xor.at(words, (row_idx, word_idx), masks)
    return BitMatrix(bm.rows, bm.cols, words)
