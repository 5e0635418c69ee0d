"""MSB-first bit packing with Exp-Golomb codes.

Unsigned ``ue(v)`` writes ``v + 1`` in binary, preceded by one zero per bit
after the first. Signed values go through the usual mapping
``v > 0 -> 2v - 1``, ``v <= 0 -> -2v`` before ``ue``.
"""

from __future__ import annotations

import numpy as np

from .errors import EncodeError, TruncationError

_MAX_UE = (1 << 31) - 2


def signed_to_unsigned(v):
    return 2 * v - 1 if v > 0 else -2 * v


def unsigned_to_signed(m):
    return (m + 1) // 2 if m & 1 else -(m // 2)


def ue_bits(v):
    """Exp-Golomb code of ``v`` as a '0'/'1' string (reference form)."""
    if v < 0:
        raise ValueError("ue() takes non-negative values")
    binary = format(v + 1, "b")
    return "0" * (len(binary) - 1) + binary


def se_bits(v):
    return ue_bits(signed_to_unsigned(v))


def _ue_codes(values):
    """Vectorised ue(): returns (code value, code length) arrays."""
    n = np.asarray(values, dtype=np.int64) + 1
    if n.size and (n.min() < 1 or n.max() > _MAX_UE + 1):
        raise EncodeError("value out of Exp-Golomb range")
    lengths = np.zeros(n.shape, dtype=np.int64)
    if n.size:
        lengths = np.floor(np.log2(n.astype(np.float64))).astype(np.int64) + 1
        # guard against log2 rounding at exact powers of two
        lengths += (n >> lengths) > 0
        lengths -= (n >> (lengths - 1)) == 0
    return n, 2 * lengths - 1


class BitWriter:
    def __init__(self):
        self._values = []
        self._widths = []

    def write_bits(self, value, nbits):
        if nbits == 0:
            return
        if value < 0 or value >> nbits:
            raise EncodeError(f"{value} does not fit in {nbits} bits")
        self._values.append(np.array([value], dtype=np.int64))
        self._widths.append(np.array([nbits], dtype=np.int64))

    def write_ue(self, v):
        self.write_ue_array([v])

    def write_se(self, v):
        self.write_se_array([v])

    def write_ue_array(self, values):
        codes, widths = _ue_codes(values)
        self._values.append(codes)
        self._widths.append(widths)

    def write_se_array(self, values):
        v = np.asarray(values, dtype=np.int64)
        mapped = np.where(v > 0, 2 * v - 1, -2 * v)
        self.write_ue_array(mapped)

    @property
    def bit_length(self):
        return int(sum(int(w.sum()) for w in self._widths))

    def to_bytes(self):
        """Concatenate everything written so far, zero-padded to a byte."""
        if not self._values:
            return b""
        values = np.concatenate(self._values)
        widths = np.concatenate(self._widths)
        if widths.size == 0:
            return b""
        max_w = int(widths.max())
        shifts = np.arange(max_w - 1, -1, -1, dtype=np.int64)
        # right-align each code in a max_w wide row, then keep its last w bits
        bits = ((values[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
        keep = np.arange(max_w)[None, :] >= (max_w - widths)[:, None]
        return np.packbits(bits[keep]).tobytes()


class BitReader:
    def __init__(self, data, base_offset=0):
        self._data = bytes(data) + b"\x00" * 8
        self._nbits = 8 * len(data)
        self._base = base_offset
        self.pos = 0

    @property
    def byte_offset(self):
        return self._base + self.pos // 8

    @property
    def bits_left(self):
        return self._nbits - self.pos

    def _window(self, pos):
        start = pos >> 3
        return int.from_bytes(self._data[start:start + 8], "big"), pos & 7

    def _fail(self):
        raise TruncationError(
            f"bitstream exhausted at byte offset {self.byte_offset}", offset=self.byte_offset
        )

    def read_bits(self, nbits):
        if nbits == 0:
            return 0
        if self.pos + nbits > self._nbits:
            self._fail()
        if nbits > 56:
            hi = self.read_bits(nbits - 32)
            return (hi << 32) | self.read_bits(32)
        chunk, skip = self._window(self.pos)
        self.pos += nbits
        return (chunk >> (64 - skip - nbits)) & ((1 << nbits) - 1)

    def read_ue(self):
        chunk, skip = self._window(self.pos)
        rest = chunk & ((1 << (64 - skip)) - 1)
        zeros = 64 - skip - rest.bit_length()
        if zeros > 31:
            self._fail()
        if self.pos + 2 * zeros + 1 > self._nbits:
            self._fail()
        if zeros + 1 + zeros <= 64 - skip:
            value = (rest >> (64 - skip - 2 * zeros - 1)) - 1
            self.pos += 2 * zeros + 1
            return value
        self.pos += zeros
        return self.read_bits(zeros + 1) - 1

    def read_se(self):
        return unsigned_to_signed(self.read_ue())

    def read_ue_array(self, count):
        return [self.read_ue() for _ in range(count)]

    def read_se_array(self, count):
        return [unsigned_to_signed(self.read_ue()) for _ in range(count)]

    def align(self):
        self.pos = (self.pos + 7) & ~7


def entropy_encode(symbols):
    """Signed Exp-Golomb code a symbol sequence into byte-aligned bytes."""
    w = BitWriter()
    w.write_se_array(list(symbols))
    return w.to_bytes()


def entropy_decode(data, count):
    return BitReader(data).read_se_array(count)
