"""Image <-> bitstream.

Encoder and decoder drive the same ``_code_planes`` loop; only the
per-symbol action differs (write a known symbol vs read one back), so the
entropy parameters each side computes are the same floating-point values.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from wavecc.autodiff import Tensor, no_grad
from wavecc.codec.bitstream import (FLAG_CROSS_COMPONENT_OFF, FLAG_LUMA_MODULES_FOR_CHROMA, Header,
                                    read_bitstream, write_bitstream)
from wavecc.codec.dequant import dequant_refine
from wavecc.codec.rangecoder import RangeDecoder, RangeEncoder
from wavecc.context import CodingMemory, ComponentPass, IncrementalFusion
from wavecc.errors import CoderError, DigestError, ShapeError
from wavecc.gmm import CDF_TOTAL, SymbolAlphabet, activate_numpy, alphabet_masses, integer_cdf
from wavecc.lifting import LEVEL_SHIFT, coding_order, dwt2d_forward, dwt2d_inverse, pyramid_from_planes, quantize_array
from wavecc.pixelio import COMPONENTS, Plane, RgbImage, crop_to, pad_to_multiple, rgb_to_ycbcr, ycbcr_to_rgb

if TYPE_CHECKING:
    from wavecc.model import WaveccModel


@dataclass
class SubbandReport:
    """``estimated_bits`` is the ideal code length under the 16-bit table the
    coder actually uses; ``model_bits`` the same under the unquantized
    mixture masses."""

    component: str
    index: int
    level: int
    orientation: str
    positions: int
    lo: int
    hi: int
    estimated_bits: float
    model_bits: float = 0.0
    symbols_digest: str = ""

    FIELDS = ("component", "index", "level", "orientation", "positions", "lo", "hi",
              "estimated_bits", "model_bits", "symbols_digest")

    def row(self):
        return tuple(getattr(self, f) for f in self.FIELDS)


@dataclass
class CodingResult:
    """What either side of the codec knows after coding one image."""

    header: Header
    symbols: dict
    image: RgbImage
    planes: tuple
    reports: list = field(default_factory=list)
    bitstream: bytes = b""

    @property
    def estimated_bits(self):
        return sum(r.estimated_bits for r in self.reports)

    @property
    def payload_bits(self):
        return 8 * (len(self.bitstream) - self.header_bytes) if self.bitstream else 0

    @property
    def header_bytes(self):
        return len(write_bitstream(self.header, b""))

    def bpp(self):
        return 8 * len(self.bitstream) / (self.header.orig_width * self.header.orig_height)


def _flags(cross_component, chroma_modules):
    return ((0 if cross_component else FLAG_CROSS_COMPONENT_OFF)
            | (0 if chroma_modules else FLAG_LUMA_MODULES_FOR_CHROMA))


def analyse_planes(model: WaveccModel, planes):
    """Padded YCbCr planes -> {component: [int32 symbol arrays in coding order]}."""
    delta = model.delta_value()
    out = {}
    for comp, plane in zip(COMPONENTS, planes):
        pyramid = dwt2d_forward(plane.values - LEVEL_SHIFT, model.transform)
        out[comp] = [quantize_array(b, delta) for b in pyramid.planes()]
    return out


def synthesize(model: WaveccModel, symbols: dict, padded_dims, original_dims, delta=None) -> tuple:
    """Symbols -> refined, cropped YCbCr planes."""
    d = np.float32(model.delta_value() if delta is None else delta)
    planes = []
    for comp in COMPONENTS:
        bands = [s.astype(np.float32) / d for s in symbols[comp]]
        pyramid = pyramid_from_planes(bands, model.levels, padded_dims)
        rec = dwt2d_inverse(pyramid, model.transform)
        refined = dequant_refine(Plane(rec, comp), model.dequant)
        planes.append(crop_to(Plane(refined.values.astype(np.float64) + LEVEL_SHIFT, comp),
                              original_dims))
    return tuple(planes)


def _code_planes(model: WaveccModel, header: Header, action, subband_dims, trace=None):
    """Run the context model over Y, Cb, Cr and call ``action`` per coded symbol.

    ``action(table, lo, row, col, component, index)`` receives the integer
    CDF for the alphabet lo..hi and returns the coded symbol value.  Subbands
    whose alphabet holds a single value are implied by the header and never
    touch the coder.  If ``trace`` is a dict it receives the raw (h, w, 3K)
    entropy parameters of every subband keyed by (component, index).
    """
    ctx = model.context
    scale = np.float32(ctx.input_scale)
    cross = not header.flags & FLAG_CROSS_COMPONENT_OFF
    chroma_modules = not header.flags & FLAG_LUMA_MODULES_FOR_CHROMA
    order = coding_order(model.levels)
    memory = CodingMemory()
    symbols, reports = {}, []
    with no_grad():
        for ci, comp in enumerate(COMPONENTS):
            cpass = ComponentPass(ctx, comp, memory, chroma_modules, cross)
            symbols[comp] = []
            for i, (level, orient) in enumerate(order, 1):
                h, w = subband_dims[i - 1]
                lo, hi = header.bounds[ci][i - 1]
                bundle = cpass.bundle(i)
                module = cpass.module(i)
                r1, r2 = module.lower_path(bundle, cpass.kind)
                fusion = IncrementalFusion(module, r1, r2, h, w)
                alphabet = SymbolAlphabet(lo, hi)
                band = np.zeros((h, w), dtype=np.int32)
                raws = None if trace is None else np.zeros((h, w, 3 * ctx_mixtures(module)))
                bits = model_bits = 0.0
                for r in range(h):
                    fusion.begin_row(r)
                    for c in range(w):
                        raw = fusion.raw(r, c)
                        if raws is not None:
                            raws[r, c] = raw
                        if lo == hi:
                            s = lo
                        else:
                            wts, mu, sg = activate_numpy(raw, ctx_mixtures(module))
                            masses = alphabet_masses(wts, mu, sg, alphabet)
                            table = integer_cdf(masses)
                            s = action(table, lo, r, c, comp, i)
                            if not lo <= s <= hi:
                                raise CoderError("decoded symbol outside the alphabet",
                                                 component=comp, subband=i, row=r, col=c)
                            k = s - lo
                            bits -= math.log2((table[k + 1] - table[k]) / CDF_TOTAL)
                            model_bits -= math.log2(masses[k] / masses.sum())
                        band[r, c] = s
                        fusion.push(r, c, np.float32(s) * scale)
                if raws is not None:
                    trace[(comp, i)] = raws
                cpass.record(i, Tensor(band.astype(np.float32)[None, None]))
                symbols[comp].append(band)
                digest = hashlib.sha256(band.astype("<i4").tobytes()).hexdigest()[:16]
                reports.append(SubbandReport(comp, i, level, orient, h * w, lo, hi, bits, model_bits,
                                             digest))
    return symbols, reports


def ctx_mixtures(module):
    return module.head2[0].shape[0] // 3


def _subband_dims(padded_dims, levels):
    h, w = padded_dims
    return [(h >> level, w >> level) for level, _ in coding_order(levels)]


def parameter_trace(model: WaveccModel, symbols: dict, padded_dims, flags=0):
    """Raw entropy parameters the codec would use for the given symbols."""
    bounds = [[(int(b.min()), int(b.max())) for b in symbols[comp]] for comp in COMPONENTS]
    header = Header(padded_dims[1], padded_dims[0], padded_dims[1], padded_dims[0], 1.0, 0, bounds,
                    flags, model.levels, model.config.mixtures)
    trace = {}

    def known(table, lo, r, c, comp, i):
        return int(symbols[comp][i - 1][r, c])

    _code_planes(model, header, known, _subband_dims(padded_dims, model.levels), trace)
    return trace


def encode_image(image: RgbImage, model: WaveccModel, cross_component=True, chroma_modules=True):
    """Returns a CodingResult whose ``bitstream`` holds the complete file."""
    if image.height < 1 or image.width < 1:
        raise ShapeError("empty image", dims=(image.height, image.width))
    step = 1 << model.levels
    padded, original = zip(*(pad_to_multiple(p, step) for p in rgb_to_ycbcr(image)))
    original_dims = original[0]
    padded_dims = padded[0].values.shape
    symbols = analyse_planes(model, padded)
    bounds = [[(int(s.min()), int(s.max())) for s in symbols[comp]] for comp in COMPONENTS]
    header = Header(orig_width=original_dims[1], orig_height=original_dims[0],
                    padded_width=padded_dims[1], padded_height=padded_dims[0],
                    delta=float(np.float32(model.delta_value())), weights_digest=model.digest(),
                    bounds=bounds, flags=_flags(cross_component, chroma_modules),
                    levels=model.levels, mixtures=model.config.mixtures)
    header.validate()
    encoder = RangeEncoder()

    def write(table, lo, r, c, comp, i):
        s = int(symbols[comp][i - 1][r, c])
        encoder.encode(s - lo, table)
        return s

    coded, reports = _code_planes(model, header, write, _subband_dims(padded_dims, model.levels))
    payload = encoder.finish()
    planes = synthesize(model, coded, padded_dims, original_dims, header.delta)
    return CodingResult(header, coded, ycbcr_to_rgb(*planes), planes, reports,
                        write_bitstream(header, payload))


def decode_image(blob: bytes, model: WaveccModel, force=False) -> CodingResult:
    header, payload = read_bitstream(blob)
    if header.levels != model.levels:
        raise ShapeError("model level count differs from the bitstream",
                         model=model.levels, bitstream=header.levels)
    if header.weights_digest != model.digest() and not force:
        raise DigestError("bitstream was written with different weights",
                          expected=f"{header.weights_digest:016x}", model=f"{model.digest():016x}")
    decoder = RangeDecoder(payload)

    def read(table, lo, r, c, comp, i):
        return decoder.decode(table) + lo

    padded_dims = (header.padded_height, header.padded_width)
    original_dims = (header.orig_height, header.orig_width)
    symbols, reports = _code_planes(model, header, read, _subband_dims(padded_dims, model.levels))
    if decoder.overrun() > 4:
        raise CoderError("payload ended before the last symbol", overrun=decoder.overrun())
    planes = synthesize(model, symbols, padded_dims, original_dims, header.delta)
    return CodingResult(header, symbols, ycbcr_to_rgb(*planes), planes, reports, blob)


def write_report(reports, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SubbandReport.FIELDS)
        for r in reports:
            writer.writerow(r.row())
