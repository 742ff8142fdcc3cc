"""Bit-exact binary arithmetic codec driven by a sequential coder.

Integer range coder with a 62-bit state and 32-bit probability
quantization; encoder and decoder quantize identically, so round trips
are exact for any coder and any input.  Codeword length is at most
ceil(-log2 q(x)) + 2 bits (the classic renormalization argument; the
quantization loss is far below a bit at the lengths this library
handles).

Streams carry an 8-byte header (magic, version, depth, length) followed
by the code bits packed big-endian; the sequence length travels in the
header rather than in the code.
"""

from __future__ import annotations

import numpy as np

from .coders import SequentialCoder
from .source import as_bits

__all__ = ["CodecError", "encode", "decode", "pack_stream", "unpack_stream", "MAGIC", "VERSION"]

_STATE_BITS = 62
_FULL = 1 << _STATE_BITS
_HALF = _FULL >> 1
_QUARTER = _FULL >> 2
_THREEQ = _HALF + _QUARTER
_TOTAL_BITS = 32
_TOTAL = 1 << _TOTAL_BITS

MAGIC = b"MD"
VERSION = 1


class CodecError(ValueError):
    """Malformed or corrupted stream."""


def _quantize_one(p1: float) -> int:
    c1 = int(p1 * _TOTAL + 0.5)
    return min(max(c1, 1), _TOTAL - 1)


def encode(coder: SequentialCoder, x) -> np.ndarray:
    """Arithmetic-encode x under the coder's model; returns code bits."""
    bits = as_bits(x)
    coder.reset()
    low, high = 0, _FULL - 1
    pending = 0
    out: list[int] = []

    def emit(b: int) -> None:
        nonlocal pending
        out.append(b)
        flip = b ^ 1
        for _ in range(pending):
            out.append(flip)
        pending = 0

    for bit in bits:
        c1 = _quantize_one(coder.prob_one())
        span = high - low + 1
        split = low + (span * (_TOTAL - c1)) // _TOTAL  # first value of the 1-region
        if bit:
            low = split
        else:
            high = split - 1
        coder.push(int(bit))
        while True:
            if high < _HALF:
                emit(0)
            elif low >= _HALF:
                emit(1)
                low -= _HALF
                high -= _HALF
            elif low >= _QUARTER and high < _THREEQ:
                pending += 1
                low -= _QUARTER
                high -= _QUARTER
            else:
                break
            low <<= 1
            high = (high << 1) | 1
    pending += 1
    emit(0 if low < _QUARTER else 1)
    coder.reset()
    return np.array(out, dtype=np.uint8)


def decode(coder: SequentialCoder, code_bits, n: int) -> np.ndarray:
    """Invert encode(): n bits from the code under the same coder model.

    Bits past the end of the code are read as zeros, which the encoder's
    termination makes safe.
    """
    code = as_bits(code_bits)
    coder.reset()
    low, high = 0, _FULL - 1
    pos = 0

    def next_bit() -> int:
        nonlocal pos
        b = int(code[pos]) if pos < len(code) else 0
        pos += 1
        return b

    value = 0
    for _ in range(_STATE_BITS):
        value = (value << 1) | next_bit()

    out = np.empty(n, dtype=np.uint8)
    for i in range(n):
        c1 = _quantize_one(coder.prob_one())
        span = high - low + 1
        split = low + (span * (_TOTAL - c1)) // _TOTAL
        bit = 1 if value >= split else 0
        if bit:
            low = split
        else:
            high = split - 1
        out[i] = bit
        coder.push(bit)
        while True:
            if high < _HALF:
                pass
            elif low >= _HALF:
                low -= _HALF
                high -= _HALF
                value -= _HALF
            elif low >= _QUARTER and high < _THREEQ:
                low -= _QUARTER
                high -= _QUARTER
                value -= _QUARTER
            else:
                break
            low <<= 1
            high = (high << 1) | 1
            value = (value << 1) | next_bit()
    coder.reset()
    return out


# ---------------------------------------------------------------------------
# stream container
# ---------------------------------------------------------------------------


def pack_stream(code_bits, depth: int, n: int) -> bytes:
    """8-byte header (magic, version, depth, n) + big-endian packed bits."""
    if not 0 <= depth < 256:
        raise CodecError(f"depth {depth} does not fit the header")
    header = MAGIC + bytes([VERSION, depth]) + int(n).to_bytes(4, "big")
    payload = np.packbits(as_bits(code_bits)).tobytes()
    return header + payload


def unpack_stream(data: bytes) -> tuple[np.ndarray, int, int]:
    """Validate a stream and return (code_bits, depth, n)."""
    if len(data) < 8:
        raise CodecError("stream shorter than its 8-byte header")
    if data[:2] != MAGIC:
        raise CodecError(f"bad magic {data[:2]!r}")
    if data[2] != VERSION:
        raise CodecError(f"unsupported stream version {data[2]}")
    depth = data[3]
    n = int.from_bytes(data[4:8], "big")
    payload = np.frombuffer(data[8:], dtype=np.uint8)
    if n > 0 and payload.size == 0:
        raise CodecError("stream truncated: no code bits for a non-empty sequence")
    return np.unpackbits(payload), depth, n
