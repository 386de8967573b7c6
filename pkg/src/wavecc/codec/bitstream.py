"""Version-1 bitstream container (all fields little-endian).

    "WCCM"  version:u16  flags:u16
    orig_width:u32 orig_height:u32 padded_width:u32 padded_height:u32
    levels:u8 mixtures:u8 delta:f32 weights_digest:u64
    3 components x (3*levels+1) subbands x (lo:i16, hi:i16)
    payload_length:u64 payload
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from wavecc.errors import FormatError

MAGIC = b"WCCM"
VERSION = 1
V1_LEVELS = 4
V1_MIXTURES = 3

FLAG_CROSS_COMPONENT_OFF = 0x1
FLAG_LUMA_MODULES_FOR_CHROMA = 0x2
KNOWN_FLAGS = FLAG_CROSS_COMPONENT_OFF | FLAG_LUMA_MODULES_FOR_CHROMA

_FIXED = struct.Struct("<4sHHIIIIBBfQ")
_BOUND = struct.Struct("<hh")
_LENGTH = struct.Struct("<Q")


@dataclass
class Header:
    orig_width: int
    orig_height: int
    padded_width: int
    padded_height: int
    delta: float
    weights_digest: int
    bounds: list = field(default_factory=list)
    flags: int = 0
    levels: int = V1_LEVELS
    mixtures: int = V1_MIXTURES
    version: int = VERSION

    @property
    def subband_count(self):
        return 3 * self.levels + 1

    def validate(self):
        if self.version != VERSION:
            raise FormatError("unsupported bitstream version", version=self.version)
        if self.levels != V1_LEVELS or self.mixtures != V1_MIXTURES:
            raise FormatError("version 1 fixes levels=4 and mixtures=3",
                              levels=self.levels, mixtures=self.mixtures)
        if self.flags & ~KNOWN_FLAGS:
            raise FormatError("unknown header flags", flags=self.flags)
        step = 1 << self.levels
        if (self.padded_width % step or self.padded_height % step
                or self.padded_width < self.orig_width or self.padded_height < self.orig_height
                or self.orig_width < 1 or self.orig_height < 1):
            raise FormatError("inconsistent image dimensions",
                              orig=(self.orig_width, self.orig_height),
                              padded=(self.padded_width, self.padded_height))
        if not self.delta > 0:
            raise FormatError("quantizer step must be positive", delta=self.delta)
        if len(self.bounds) != 3 or any(len(c) != self.subband_count for c in self.bounds):
            raise FormatError("alphabet bound table has the wrong shape")
        for comp, rows in enumerate(self.bounds):
            for i, (lo, hi) in enumerate(rows, 1):
                if lo > hi:
                    raise FormatError("alphabet lower bound above upper bound",
                                      component=comp, subband=i, lo=lo, hi=hi)


def write_bitstream(header: Header, payload: bytes) -> bytes:
    header.validate()
    parts = [_FIXED.pack(MAGIC, header.version, header.flags, header.orig_width, header.orig_height,
                         header.padded_width, header.padded_height, header.levels, header.mixtures,
                         header.delta, header.weights_digest)]
    try:
        parts += [_BOUND.pack(lo, hi) for rows in header.bounds for lo, hi in rows]
    except struct.error:
        raise FormatError("alphabet bounds do not fit signed 16 bits") from None
    parts += [_LENGTH.pack(len(payload)), payload]
    return b"".join(parts)


def read_bitstream(blob: bytes):
    """Parse a container into (Header, payload); trailing bytes are rejected."""
    if len(blob) < _FIXED.size:
        raise FormatError("header parse error: truncated header", length=len(blob))
    (magic, version, flags, ow, oh, pw, ph, levels, mixtures, delta,
     digest) = _FIXED.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError("header parse error: bad magic", magic=magic.hex())
    if version != VERSION:
        raise FormatError("header parse error: unsupported version", version=version)
    if levels != V1_LEVELS or mixtures != V1_MIXTURES:
        raise FormatError("header parse error: version 1 fixes levels=4 and mixtures=3",
                          levels=levels, mixtures=mixtures)
    pos = _FIXED.size
    n = 3 * levels + 1
    table_end = pos + 3 * n * _BOUND.size
    if len(blob) < table_end + _LENGTH.size:
        raise FormatError("header parse error: truncated bound table", length=len(blob))
    bounds = []
    for _ in range(3):
        rows = []
        for _ in range(n):
            rows.append(_BOUND.unpack_from(blob, pos))
            pos += _BOUND.size
        bounds.append(rows)
    (length,) = _LENGTH.unpack_from(blob, pos)
    pos += _LENGTH.size
    if len(blob) - pos != length:
        raise FormatError("header parse error: payload length mismatch",
                          declared=length, available=len(blob) - pos)
    header = Header(ow, oh, pw, ph, delta, digest, bounds, flags, levels, mixtures, version)
    try:
        header.validate()
    except FormatError as exc:
        raise FormatError(f"header parse error: {exc}") from None
    return header, blob[pos:]
