"""PSNR, bits per pixel, Bjøntegaard delta rate and RD-curve CSV export."""

from __future__ import annotations

import csv
import math
from collections import OrderedDict, defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from wavecc.errors import NumericError, ShapeError
from wavecc.pixelio import RgbImage, to_uint8

RD_COLUMNS = ("codec", "lambda", "bpp", "psnr_db")
PEAK = 255.0


@dataclass(frozen=True)
class RdPoint:
    bpp: float
    psnr_db: float
    lam: float | None = None


def psnr(reference: RgbImage, test: RgbImage) -> float:
    """PSNR over all three 8-bit RGB channels; identical images give +inf."""
    ref = to_uint8(reference.pixels).astype(np.float64)
    out = to_uint8(test.pixels).astype(np.float64)
    if ref.shape != out.shape:
        raise ShapeError("PSNR needs images of equal size", reference=ref.shape, test=out.shape)
    mse = float(np.mean((ref - out) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / mse)


def bits_per_pixel(n_bytes: int, width: int, height: int) -> float:
    return 8.0 * n_bytes / (width * height)


def _curve(points):
    pts = sorted((float(p.psnr_db), float(p.bpp)) if isinstance(p, RdPoint) else (float(p[1]), float(p[0]))
                 for p in points)
    if len(pts) < 4:
        raise NumericError("BD rate needs at least four points per curve", points=len(pts))
    q = np.array([p[0] for p in pts])
    r = np.array([p[1] for p in pts])
    if np.any(r <= 0) or not np.all(np.isfinite(q)):
        raise NumericError("RD points need positive rate and finite PSNR")
    return q, np.log10(r)


def _integral(q, logr, lo, hi, method):
    if method == "cubic":
        poly = np.polyint(np.polyfit(q, logr, 3))
        return np.polyval(poly, hi) - np.polyval(poly, lo)
    if method == "pchip":
        if np.any(np.diff(q) <= 0):
            raise NumericError("piecewise fit needs strictly increasing PSNR")
        return float(PchipInterpolator(q, logr).integrate(lo, hi))
    raise NumericError("unknown BD fit", method=method)


def bd_rate(anchor, test, method="cubic") -> float:
    """Average rate difference of ``test`` against ``anchor`` in percent.

    Points are (bpp, psnr) pairs or RdPoint.  log10(rate) is fitted as a
    function of PSNR and integrated over the shared PSNR interval; negative
    values mean the test codec needs fewer bits.
    """
    qa, ra = _curve(anchor)
    qt, rt = _curve(test)
    lo = max(qa.min(), qt.min())
    hi = min(qa.max(), qt.max())
    if not hi > lo:
        raise NumericError("RD curves do not overlap in PSNR",
                           anchor=(float(qa.min()), float(qa.max())),
                           test=(float(qt.min()), float(qt.max())))
    diff = (_integral(qt, rt, lo, hi, method) - _integral(qa, ra, lo, hi, method)) / (hi - lo)
    return (10.0 ** diff - 1.0) * 100.0


def export_rd(curves, path):
    """``curves`` maps codec name -> RdPoints; rows sorted by codec order then bpp."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RD_COLUMNS)
        for codec, points in curves.items():
            for p in sorted(points, key=lambda p: (p.bpp, p.psnr_db)):
                writer.writerow((codec, "" if p.lam is None else repr(float(p.lam)),
                                 repr(float(p.bpp)), repr(float(p.psnr_db))))


def read_rd(path):
    curves = OrderedDict()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RD_COLUMNS:
            raise ShapeError("RD CSV must have columns " + ",".join(RD_COLUMNS),
                             found=reader.fieldnames)
        for row in reader:
            lam = float(row["lambda"]) if row["lambda"] else None
            curves.setdefault(row["codec"], []).append(
                RdPoint(float(row["bpp"]), float(row["psnr_db"]), lam))
    return curves


def component_rate_report(reports):
    """Bit shares per component and per (component, subband index).

    ``reports`` are the per-subband diagnostics of an encode.  With no bits
    at all every share is zero.
    """
    per_component = defaultdict(float)
    per_subband = OrderedDict()
    for r in reports:
        per_component[r.component] += r.estimated_bits
        per_subband[(r.component, r.index)] = r.estimated_bits
    total = sum(per_component.values())
    scale = 1.0 / total if total > 0 else 0.0
    return {
        "total_bits": total,
        "components": {c: per_component[c] * scale for c in ("Y", "Cb", "Cr")},
        "subbands": OrderedDict((k, v * scale) for k, v in per_subband.items()),
        "chroma_share": (per_component["Cb"] + per_component["Cr"]) * scale,
    }
