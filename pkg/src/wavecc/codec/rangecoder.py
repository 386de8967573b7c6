"""Byte-oriented range coder over 16-bit frequency tables.

Encoder interval: ``low`` plus a 32-bit ``range`` kept >= 2^24 by shifting
out one byte at a time.  Carries into bytes already decided are resolved
with a one-byte cache and a count of pending 0xFF bytes.  The stream ends
with the shortest tail that pins a value inside the final interval; the
decoder reads zeros past the end, so trailing zero bytes are dropped.  A
CRC32 of the coded bytes is appended so damaged streams fail loudly.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from wavecc.errors import CoderError
from wavecc.gmm import CDF_BITS, CDF_TOTAL

TOP = 1 << 24
MASK32 = 0xFFFFFFFF
CRC_BYTES = 4


def _check_table(cdf, symbol=None):
    n = len(cdf) - 1
    if n < 1 or cdf[0] != 0 or cdf[n] != CDF_TOTAL:
        raise CoderError("frequency table must run from 0 to 65536", size=n)
    if symbol is not None and not 0 <= symbol < n:
        raise CoderError("symbol outside the alphabet", symbol=symbol, size=n)


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.cache = None
        self.pending = 0
        self.out = bytearray()
        self._done = False

    def _shift(self):
        if self.low < 0xFF000000 or self.low > MASK32:
            carry = self.low >> 32
            if self.cache is not None:
                self.out.append((self.cache + carry) & 0xFF)
            self.out.extend(bytes([(0xFF + carry) & 0xFF]) * self.pending)
            self.pending = 0
            self.cache = (self.low >> 24) & 0xFF
        else:
            self.pending += 1
        self.low = (self.low << 8) & MASK32

    def encode(self, symbol: int, cdf):
        """Code ``symbol`` (index into the table, 0-based)."""
        start = int(cdf[symbol]) if 0 <= symbol < len(cdf) - 1 else -1
        if start < 0 or cdf[-1] != CDF_TOTAL:
            _check_table(cdf, symbol)
        size = int(cdf[symbol + 1]) - start
        if size <= 0:
            raise CoderError("zero-width frequency span", symbol=symbol)
        r = self.range >> CDF_BITS
        self.low += r * start
        self.range = r * size
        while self.range < TOP:
            self.range <<= 8
            self._shift()

    def finish(self) -> bytes:
        """Flush and return coded bytes followed by their CRC32."""
        if not self._done:
            # round up to a multiple of 2^24: one more byte then fixes the value
            self.low = (self.low + TOP - 1) & ~(TOP - 1)
            self._shift()
            self._shift()
            self._done = True
        body = bytes(self.out).rstrip(b"\x00")
        return body + struct.pack("<I", zlib.crc32(body) & MASK32)


class RangeDecoder:
    def __init__(self, payload: bytes):
        if len(payload) < CRC_BYTES:
            raise CoderError("payload shorter than its checksum", length=len(payload))
        body, tail = payload[:-CRC_BYTES], payload[-CRC_BYTES:]
        if struct.unpack("<I", tail)[0] != zlib.crc32(body) & MASK32:
            raise CoderError("payload checksum mismatch", length=len(payload))
        self.data = body
        self.pos = 0
        self.range = MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._byte()

    def _byte(self):
        if self.pos < len(self.data):
            b = self.data[self.pos]
        else:
            b = 0
        self.pos += 1
        return b

    def decode(self, cdf) -> int:
        r = self.range >> CDF_BITS
        v = self.code // r
        if v >= CDF_TOTAL:
            raise CoderError("coded value outside the frequency table", position=self.pos)
        symbol = int(np.searchsorted(cdf, v, side="right")) - 1
        if not 0 <= symbol < len(cdf) - 1:
            raise CoderError("corrupt frequency table", value=int(v))
        start = int(cdf[symbol])
        self.code -= r * start
        self.range = r * (int(cdf[symbol + 1]) - start)
        while self.range < TOP:
            self.range <<= 8
            self.code = ((self.code << 8) | self._byte()) & MASK32
        return symbol

    def overrun(self) -> int:
        """Bytes read beyond the coded data (zero padding)."""
        return max(0, self.pos - len(self.data))


def range_encode(symbols, cdf_provider) -> bytes:
    """``cdf_provider(k)`` returns the table for the k-th symbol."""
    enc = RangeEncoder()
    for k, s in enumerate(symbols):
        enc.encode(int(s), cdf_provider(k))
    return enc.finish()


def range_decode(payload: bytes, count: int, cdf_provider):
    """``cdf_provider(k, decoded_so_far)`` returns the table for symbol k."""
    dec = RangeDecoder(payload)
    out = []
    for k in range(count):
        out.append(dec.decode(cdf_provider(k, out)))
    return out
