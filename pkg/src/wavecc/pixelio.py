"""Image files, colour conversion and transform-friendly padding.

Reads binary PPM (P6, maxval 255) and non-interlaced 8-bit PNG; writes PPM
always and PNG on request.  Colour conversion is full-range BT.601, kept as
unclamped reals until 8-bit export.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from wavecc.errors import DataError, FormatError, ShapeError

COMPONENTS = ("Y", "Cb", "Cr")

# rows: Y, Cb, Cr; columns: R, G, B
RGB_TO_YCBCR = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
YCBCR_OFFSET = np.array([0.0, 128.0, 128.0])
YCBCR_TO_RGB = np.linalg.inv(RGB_TO_YCBCR)


@dataclass
class Plane:
    """One colour component; ``values`` has shape (height, width)."""

    values: np.ndarray
    label: str = "gray"

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


@dataclass
class RgbImage:
    """8-bit or real RGB samples with shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ShapeError("RGB image must be (H, W, 3)", shape=self.pixels.shape)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def plane(self, index):
        return Plane(self.pixels[:, :, index].astype(np.float64), "RGB"[index])

    def to_uint8(self):
        return RgbImage(to_uint8(self.pixels))


def to_uint8(values):
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# colour conversion
# ---------------------------------------------------------------------------

def rgb_to_ycbcr(image: RgbImage):
    rgb = image.pixels.astype(np.float64)
    ycc = rgb @ RGB_TO_YCBCR.T + YCBCR_OFFSET
    return tuple(Plane(ycc[:, :, k], COMPONENTS[k]) for k in range(3))


def ycbcr_to_rgb(y: Plane, cb: Plane, cr: Plane) -> RgbImage:
    if not (y.values.shape == cb.values.shape == cr.values.shape):
        raise ShapeError("component planes differ in size",
                         y=y.values.shape, cb=cb.values.shape, cr=cr.values.shape)
    ycc = np.stack([y.values, cb.values, cr.values], axis=-1).astype(np.float64)
    return RgbImage((ycc - YCBCR_OFFSET) @ YCBCR_TO_RGB.T)


# ---------------------------------------------------------------------------
# padding
# ---------------------------------------------------------------------------

def pad_to_multiple(plane: Plane, m: int):
    """Extend right/bottom to multiples of ``m``.

    Uses whole-sample reflection; a direction only one pixel long cannot
    reflect and falls back to edge replication.  Returns (padded, (h, w)).
    """
    if m < 1:
        raise ShapeError("padding multiple must be >= 1", m=m)
    h, w = plane.values.shape
    ph = (-h) % m
    pw = (-w) % m
    values = plane.values
    if ph:
        values = np.pad(values, ((0, ph), (0, 0)), mode="reflect" if h >= 2 else "edge")
    if pw:
        values = np.pad(values, ((0, 0), (0, pw)), mode="reflect" if w >= 2 else "edge")
    return Plane(values, plane.label), (h, w)


def crop_to(plane: Plane, dims) -> Plane:
    h, w = dims
    return Plane(plane.values[:h, :w], plane.label)


# ---------------------------------------------------------------------------
# PPM
# ---------------------------------------------------------------------------

def _ppm_tokens(data: bytes, count: int):
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1


def decode_ppm(data: bytes) -> RgbImage:
    tokens, pos = _ppm_tokens(data, 4)
    if tokens[0] != b"P6":
        raise FormatError("unsupported PPM variant", magic=tokens[0].decode("latin-1"))
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("malformed PPM header") from None
    if maxval != 255:
        raise FormatError("unsupported bit depth", maxval=maxval)
    n = width * height * 3
    body = data[pos:pos + n]
    if len(body) != n:
        raise FormatError("truncated PPM pixel data", expected=n, found=len(body))
    return RgbImage(np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3).copy())


def encode_ppm(image: RgbImage) -> bytes:
    px = to_uint8(image.pixels)
    return b"P6\n%d %d\n255\n" % (image.width, image.height) + px.tobytes()


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_CHANNELS = {0: 1, 2: 3, 6: 4}


def _unfilter(raw: bytes, height: int, stride: int, bpp: int) -> np.ndarray:
    out = np.zeros((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.int32)
    pos = 0
    for y in range(height):
        if pos + 1 + stride > len(raw):
            raise FormatError("truncated PNG image data")
        ftype = raw[pos]
        line = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=pos + 1).astype(np.int32)
        pos += 1 + stride
        if ftype == 0:
            cur = line
        elif ftype == 1:
            cur = line.copy()
            for x in range(bpp, stride):
                cur[x] = (cur[x] + cur[x - bpp]) & 0xFF
        elif ftype == 2:
            cur = (line + prev) & 0xFF
        elif ftype == 3:
            cur = line.copy()
            for x in range(stride):
                left = cur[x - bpp] if x >= bpp else 0
                cur[x] = (cur[x] + ((left + prev[x]) >> 1)) & 0xFF
        elif ftype == 4:
            cur = line.copy()
            for x in range(stride):
                a = cur[x - bpp] if x >= bpp else 0
                b = prev[x]
                c = prev[x - bpp] if x >= bpp else 0
                p = a + b - c
                pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                pred = a if (pa <= pb and pa <= pc) else (b if pb <= pc else c)
                cur[x] = (cur[x] + pred) & 0xFF
        else:
            raise FormatError("bad PNG filter type", filter=ftype, row=y)
        out[y] = cur
        prev = cur
    return out


def decode_png(data: bytes) -> RgbImage:
    if not data.startswith(PNG_SIGNATURE):
        raise FormatError("not a PNG file")
    pos = len(PNG_SIGNATURE)
    header = None
    idat = []
    while True:
        if pos + 8 > len(data):
            raise FormatError("truncated PNG chunk")
        length, ctype = struct.unpack(">I4s", data[pos:pos + 8])
        body = data[pos + 8:pos + 8 + length]
        if len(body) != length or pos + 12 + length > len(data):
            raise FormatError("truncated PNG chunk", chunk=ctype.decode("latin-1"))
        pos += 12 + length
        if ctype == b"IHDR":
            header = struct.unpack(">IIBBBBB", body)
        elif ctype == b"IDAT":
            idat.append(body)
        elif ctype == b"IEND":
            break
    if header is None:
        raise FormatError("PNG without IHDR")
    width, height, depth, ctype, _, _, interlace = header
    if depth != 8:
        raise FormatError("unsupported bit depth", depth=depth)
    if ctype not in _CHANNELS:
        raise FormatError("unsupported PNG colour type", colour_type=ctype)
    if interlace:
        raise FormatError("interlaced PNG not supported")
    try:
        raw = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise FormatError("corrupt PNG image data", detail=str(exc)) from None
    ch = _CHANNELS[ctype]
    px = _unfilter(raw, height, width * ch, ch).reshape(height, width, ch)
    if ch == 1:
        px = np.repeat(px, 3, axis=2)
    return RgbImage(np.ascontiguousarray(px[:, :, :3]))


def encode_png(image: RgbImage) -> bytes:
    px = to_uint8(image.pixels)
    raw = b"".join(b"\x00" + row.tobytes() for row in px)

    def chunk(tag, body):
        return (struct.pack(">I", len(body)) + tag + body
                + struct.pack(">I", zlib.crc32(tag + body) & 0xFFFFFFFF))

    ihdr = struct.pack(">IIBBBBB", image.width, image.height, 8, 2, 0, 0, 0)
    return (PNG_SIGNATURE + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(raw, 9))
            + chunk(b"IEND", b""))


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def load_image(path) -> RgbImage:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise DataError("cannot read image", path=str(path), reason=exc.strerror) from None
    if data.startswith(PNG_SIGNATURE):
        return decode_png(data)
    if data.startswith(b"P"):
        return decode_ppm(data)
    raise FormatError("unrecognised image format", path=str(path))


def save_image(image: RgbImage, path, fmt: str | None = None) -> None:
    fmt = fmt or ("png" if str(path).lower().endswith(".png") else "ppm")
    blob = encode_png(image) if fmt == "png" else encode_ppm(image)
    with open(path, "wb") as fh:
        fh.write(blob)
