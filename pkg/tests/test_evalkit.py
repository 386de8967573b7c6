import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bd_rate_trapezoid, psnr_formula
from wavecc.codec.pipeline import SubbandReport
from wavecc.errors import NumericError, ShapeError
from wavecc.evalkit import (RdPoint, bd_rate, bits_per_pixel, component_rate_report, export_rd,
                            psnr, read_rd)
from wavecc.pixelio import RgbImage


def image(value, shape=(8, 8, 3)):
    return RgbImage(np.full(shape, value, np.uint8))


def curve(rng, n=6):
    """Monotone RD curve: PSNR rises with log rate."""
    bpp = np.geomspace(0.125, 4.0, n) * rng.uniform(0.9, 1.1, n)
    q = 30 + 6 * np.log2(bpp) + rng.uniform(-0.2, 0.2) + 0.3 * np.log2(bpp) ** 2 * rng.uniform(-0.2, 0.2)
    return [(float(r), float(v)) for r, v in zip(bpp, q)]


def test_psnr_identical_is_infinite():
    assert psnr(image(10), image(10)) == math.inf


def test_psnr_unit_error():
    assert psnr(image(10), image(11)) == pytest.approx(20 * math.log10(255), abs=1e-9)
    assert psnr(image(10), image(11)) == pytest.approx(48.131, abs=1e-3)


def test_psnr_matches_formula(gen):
    a = gen.integers(0, 256, (9, 7, 3)).astype(np.uint8)
    b = np.clip(a.astype(int) + gen.integers(-9, 10, a.shape), 0, 255).astype(np.uint8)
    mse = np.mean((a.astype(float) - b.astype(float)) ** 2)
    assert psnr(RgbImage(a), RgbImage(b)) == pytest.approx(psnr_formula(mse), rel=1e-12)


def test_psnr_doubling_error_costs_six_db():
    drop = psnr(image(100), image(102)) - psnr(image(100), image(104))
    assert drop == pytest.approx(20 * math.log10(2), abs=1e-9)
    assert drop == pytest.approx(6.02, abs=0.01)


def test_psnr_monotone_in_error():
    values = [psnr(image(100), image(100 + e)) for e in range(1, 20)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_psnr_size_mismatch():
    with pytest.raises(ShapeError):
        psnr(image(0, (4, 4, 3)), image(0, (4, 5, 3)))


def test_bits_per_pixel():
    assert bits_per_pixel(100, 20, 10) == 4.0


# --- BD rate ----------------------------------------------------------------------------

def test_identical_curves(gen):
    c = curve(gen)
    assert abs(bd_rate(c, c)) <= 1e-9


def test_rate_scaled_by_ten_percent(gen):
    c = curve(gen)
    assert bd_rate(c, [(r * 1.1, q) for r, q in c]) == pytest.approx(10.0, abs=0.1)


def test_quality_shift_saves_rate():
    # locally linear: PSNR = 30 + 6 log2(bpp)
    anchor = [(r, 30 + 6 * math.log2(r)) for r in (0.25, 0.5, 1, 2, 4)]
    test = [(r, q + 1) for r, q in anchor]
    got = bd_rate(anchor, test)
    assert got < 0
    assert got == pytest.approx(bd_rate_trapezoid(anchor, test), abs=1e-6)
    # closed form for this line: rate factor 2^(-1/6)
    assert got == pytest.approx((2 ** (-1 / 6) - 1) * 100, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_matches_trapezoid_oracle(seed):
    rng = np.random.default_rng(seed)
    a, b = curve(rng), curve(rng)
    assert bd_rate(a, b) == pytest.approx(bd_rate_trapezoid(a, b), abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_antisymmetry(seed):
    rng = np.random.default_rng(seed)
    a, b = curve(rng), curve(rng)
    ab, ba = bd_rate(a, b), bd_rate(b, a)
    assert abs(ab - (-ba / (1 + ba / 100))) <= 0.05


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_point_order_irrelevant(seed):
    rng = np.random.default_rng(seed)
    a, b = curve(rng), curve(rng)
    shuffled = [a[k] for k in rng.permutation(len(a))]
    assert bd_rate(shuffled, b) == bd_rate(a, b)


def test_rdpoints_accepted(gen):
    c = curve(gen)
    pts = [RdPoint(r, q) for r, q in c]
    assert bd_rate(pts, c) == pytest.approx(0.0, abs=1e-9)


def test_pchip_fit(gen):
    c = curve(gen)
    assert bd_rate(c, [(r * 1.1, q) for r, q in c], method="pchip") == pytest.approx(10.0, abs=1e-9)


def test_bd_errors(gen):
    c = curve(gen)
    with pytest.raises(NumericError):
        bd_rate(c[:3], c)
    with pytest.raises(NumericError):
        bd_rate(c, [(r, q + 100) for r, q in c])
    with pytest.raises(NumericError):
        bd_rate(c, c, method="linear")
    with pytest.raises(NumericError):
        bd_rate([(0.0, 30), (1, 31), (2, 32), (3, 33)], c)


# --- export -------------------------------------------------------------------------------

def test_export_round_trip(tmp_path):
    curves = {"wavecc": [RdPoint(0.5, 30.0, 0.01), RdPoint(0.25, 28.0, 0.005), RdPoint(1.0, 33.5, 0.02)],
              "baseline": [RdPoint(0.3, 27.0), RdPoint(0.7, 31.0), RdPoint(0.1 + 0.2, 29.0)]}
    path = tmp_path / "rd.csv"
    export_rd(curves, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "codec,lambda,bpp,psnr_db"
    assert len(lines) == 7
    assert lines[1].startswith("wavecc,0.005,0.25,")
    back = read_rd(path)
    assert list(back) == ["wavecc", "baseline"]
    assert sorted(back["wavecc"], key=lambda p: p.bpp) == sorted(curves["wavecc"], key=lambda p: p.bpp)
    assert {p.bpp for p in back["baseline"]} == {0.3, 0.7, 0.1 + 0.2}


def test_export_empty(tmp_path):
    export_rd({}, tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().splitlines() == ["codec,lambda,bpp,psnr_db"]


def test_read_rejects_wrong_columns(tmp_path):
    (tmp_path / "x.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ShapeError):
        read_rd(tmp_path / "x.csv")


# --- rate shares ----------------------------------------------------------------------------

def report(comp, i, bits):
    return SubbandReport(comp, i, 1, "HH", 4, 0, 1, bits)


def test_shares_sum_to_one():
    reps = [report("Y", 1, 60.0), report("Y", 2, 20.0), report("Cb", 1, 15.0), report("Cr", 1, 5.0)]
    out = component_rate_report(reps)
    assert sum(out["components"].values()) == pytest.approx(1.0)
    assert out["chroma_share"] == pytest.approx(0.2)
    assert out["subbands"][("Y", 2)] == pytest.approx(0.2)
    assert out["total_bits"] == 100.0


def test_no_bits_gives_zero_shares():
    out = component_rate_report([report("Y", 1, 0.0)])
    assert out["chroma_share"] == 0.0
