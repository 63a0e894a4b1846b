"""Counter-based random streams.

Every draw is addressed by ``(seed, stream, position)``: the stream key selects
an independent Philox keystream and the position is the index of the 64-bit
word inside it.  Blocks are laid out row-major as ``row * row_len + col`` so a
block for rows ``[start, start + n)`` can be produced on its own, in any order
and on any thread, and is bit-identical to the same rows cut out of a full
draw.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_MASK64 = (1 << 64) - 1
_WORDS_PER_COUNTER = 4

# stream kinds (high bits of the stream code)
BROWNIAN = 0
INIT = 1
AUX = 2
MKV_COMMON = 3
MKV_IDIO = 4
MKV_INIT = 5
TYPES = 6
CONTROL = 7


def stream_code(kind: int, index: int = 0, sub: int = 0) -> int:
    if not (0 <= index < (1 << 24) and 0 <= sub < (1 << 24)):
        raise ValueError(f"stream index/sub out of range: {index}, {sub}")
    return (kind << 48) | (sub << 24) | index


def _bitgen(seed: int, stream: int, start_word: int) -> np.random.Philox:
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    bg = np.random.Philox(key=key)
    jumps, rem = divmod(start_word, _WORDS_PER_COUNTER)
    if jumps:
        bg.advance(jumps)
    if rem:
        bg.random_raw(rem)
    return bg


def raw_words(seed: int, stream: int, start: int, count: int) -> np.ndarray:
    if count == 0:
        return np.empty(0, dtype=np.uint64)
    return _bitgen(seed, stream, start).random_raw(count)


def uniforms(seed: int, stream: int, row_start: int, n_rows: int, row_len: int) -> np.ndarray:
    """Open-interval uniforms ``(k + 0.5) / 2**53`` on a ``(n_rows, row_len)`` block."""
    words = raw_words(seed, stream, row_start * row_len, n_rows * row_len)
    u = ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return u.reshape(n_rows, row_len)


def normals(seed: int, stream: int, row_start: int, n_rows: int, row_len: int) -> np.ndarray:
    """Standard normals by inverse CDF, one word per variate."""
    return ndtri(uniforms(seed, stream, row_start, n_rows, row_len))
