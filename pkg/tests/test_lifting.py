import contextlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_transform
from oracles import cdf97_1d, cdf97_2d
from wavecc.autodiff import ParamRegistry, Tensor, grad_check, no_grad, ops, parameter
from wavecc.autodiff.gradcheck import promoted
from wavecc.errors import ShapeError
from wavecc.lifting import (CDF97_TAPS, LiftingTransform, coding_order, dequantize, dequantize_tensor,
                            dwt2d_forward, dwt2d_inverse, pyramid_from_planes, quantize, quantize_array,
                            quantize_ste, round_half_away)


def cdf_transform(levels=1):
    return LiftingTransform(ParamRegistry(), levels=levels)


@contextlib.contextmanager
def exact_cdf(t, registry):
    """Promote to float64 and load the double-precision 9/7 taps."""
    with promoted([p for _, p in registry.items()]):
        for name, net in t.filters.items():
            net.skip.data[...] = CDF97_TAPS[name]
        yield


# --- 1D ---------------------------------------------------------------------------

def test_zero_filters_split_even_odd():
    t = cdf_transform()
    for net in t.filters.values():
        net.skip.data[...] = 0
    x = np.arange(12.0).reshape(1, 1, 1, 12)
    with no_grad():
        lp, hp = t.lift_forward(Tensor(x), 3)
    np.testing.assert_array_equal(lp.data[0, 0, 0], x[0, 0, 0, 0::2])
    np.testing.assert_array_equal(hp.data[0, 0, 0], x[0, 0, 0, 1::2])


def test_cdf97_1d_matches_oracle_double_precision(gen):
    reg = ParamRegistry()
    t = LiftingTransform(reg, levels=1)
    with exact_cdf(t, reg), no_grad():
        for n in (2, 4, 10, 64):
            x = gen.uniform(-128, 128, size=(1, 1, 1, n))
            lp, hp = t.lift_forward(Tensor(x), 3)
            lo, hi = cdf97_1d(x[0, 0, 0])
            np.testing.assert_allclose(lp.data[0, 0, 0], lo, atol=1e-10)
            np.testing.assert_allclose(hp.data[0, 0, 0], hi, atol=1e-10)


def test_cdf97_1d_float32_close_to_oracle(gen):
    t = cdf_transform()
    x = gen.uniform(-128, 128, size=(1, 1, 1, 64)).astype(np.float32)
    with no_grad():
        lp, hp = t.lift_forward(Tensor(x), 3)
    lo, hi = cdf97_1d(x[0, 0, 0])
    # float32 taps and arithmetic on pixel-scale data
    np.testing.assert_allclose(hp.data[0, 0, 0], hi, atol=1e-4)
    np.testing.assert_allclose(lp.data[0, 0, 0], lo, atol=1e-4)


def test_cdf97_impulse_matches_oracle():
    t = cdf_transform()
    x = np.zeros((1, 1, 1, 16), np.float32)
    x[0, 0, 0, 7] = 1.0
    with no_grad():
        lp, hp = t.lift_forward(Tensor(x), 3)
    lo, hi = cdf97_1d(x[0, 0, 0])
    np.testing.assert_allclose(lp.data[0, 0, 0], lo, atol=1e-6)
    np.testing.assert_allclose(hp.data[0, 0, 0], hi, atol=1e-6)


def interior(n):
    """Highpass indices whose 7-tap analysis support stays inside a length-n signal."""
    return slice(1, (n - 5) // 2 + 1)


def test_constant_and_ramp_have_zero_highpass():
    t = cdf_transform()
    n = 64
    with no_grad():
        _, hp = t.lift_forward(Tensor(np.full((1, 1, 1, n), 93.0, np.float32)), 3)
        # float32 taps: 1 + 2 * alpha is not exactly 0
        assert np.max(np.abs(hp.data)) <= 1e-4
        ramp = (np.arange(n, dtype=np.float32) * 1.5 - 40)[None, None, None]
        _, hp = t.lift_forward(Tensor(ramp), 3)
    assert np.max(np.abs(hp.data[0, 0, 0, interior(n)])) <= 1e-4
    # the oracle shows the same boundary behaviour under symmetric extension
    _, ref = cdf97_1d(ramp[0, 0, 0])
    np.testing.assert_allclose(hp.data[0, 0, 0], ref, atol=1e-4)


def test_constant_highpass_vanishes_in_double_precision():
    reg = ParamRegistry()
    t = LiftingTransform(reg, levels=1)
    with exact_cdf(t, reg), no_grad():
        _, hp = t.lift_forward(Tensor(np.full((1, 1, 1, 32), 93.0)), 3)
    assert np.max(np.abs(hp.data)) <= 1e-10


def test_odd_length_rejected():
    with pytest.raises(ShapeError):
        cdf_transform().lift_forward(Tensor(np.zeros((1, 1, 1, 7))), 3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([2, 8, 64]), st.sampled_from([2, 3]))
def test_1d_random_weights_invertible(seed, n, axis):
    t = random_transform(seed, levels=1)
    shape = (2, 1, n, 4) if axis == 2 else (2, 1, 4, n)
    x = np.random.default_rng(seed).uniform(-128, 128, shape).astype(np.float32)
    with no_grad():
        rec = t.lift_inverse(*t.lift_forward(Tensor(x), axis), axis)
    assert np.max(np.abs(rec.data - x)) <= 1e-4


# --- 2D ------------------------------------------------------------------------------

def test_cdf97_2d_matches_separable_oracle(gen):
    reg = ParamRegistry()
    t = LiftingTransform(reg, levels=1)
    x = gen.uniform(-128, 128, size=(1, 1, 16, 12))
    with exact_cdf(t, reg), no_grad():
        bands = t.forward(Tensor(x))
    ref = cdf97_2d(x[0, 0])
    for band, name in zip(bands, ("LL", "HL", "LH", "HH")):
        np.testing.assert_allclose(band.data[0, 0], ref[name], atol=1e-10, err_msg=name)


def test_constant_plane_only_ll():
    t = cdf_transform(levels=4)
    pyr = dwt2d_forward(np.full((64, 64), 37.0), t)
    for sb in pyr.subbands[1:]:
        assert np.max(np.abs(sb.plane)) <= 1e-4
    ll = pyr.subbands[0].plane
    assert np.ptp(ll) <= 1e-4


def test_four_levels_give_thirteen_subbands():
    pyr = dwt2d_forward(np.zeros((64, 64)), cdf_transform(levels=4))
    dims = [s.plane.shape for s in pyr.subbands]
    assert len(dims) == 13
    assert dims == [(4, 4)] * 4 + [(8, 8)] * 3 + [(16, 16)] * 3 + [(32, 32)] * 3
    assert pyr.coefficient_count() == 64 * 64


def test_dims_must_be_divisible():
    with pytest.raises(ShapeError):
        dwt2d_forward(np.zeros((40, 64)), cdf_transform(levels=4))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_2d_random_weights_invertible(seed):
    t = random_transform(seed)
    x = np.random.default_rng(seed).uniform(0, 255, (64, 32))
    rec = dwt2d_inverse(dwt2d_forward(x, t), t)
    assert np.max(np.abs(rec - x.astype(np.float32))) <= 1e-3


def test_random_skip_taps_invertible_in_double_precision():
    reg = ParamRegistry()
    t = random_transform(7, skip_noise=0.1, registry=reg)
    x = np.random.default_rng(7).uniform(0, 255, (1, 1, 64, 64))
    with promoted([p for _, p in reg.items()]), no_grad():
        rec = t.inverse(t.forward(Tensor(x)))
    assert np.max(np.abs(rec.data - x)) <= 1e-8


def test_inverse_wrong_subband_count():
    with pytest.raises(ShapeError):
        cdf_transform(levels=2).inverse([Tensor(np.zeros((1, 1, 2, 2)))] * 4)


# --- coding order ------------------------------------------------------------------------

def test_coding_order_examples():
    assert coding_order(1) == [(1, "LL"), (1, "HL"), (1, "LH"), (1, "HH")]
    order = coding_order(4)
    assert len(order) == 13
    assert order[4] == (3, "HL") and order[1] == (4, "HL")
    assert order[-1] == (1, "HH")


@given(st.integers(1, 8))
def test_coding_order_structure(levels):
    order = coding_order(levels)
    assert len(order) == 3 * levels + 1
    for i in range(5, len(order) + 1):
        # subband i and i-3 share orientation, i-3 one level coarser
        a, b = order[i - 1], order[i - 4]
        assert a[1] == b[1] and b[0] == a[0] + 1


# --- quantization -------------------------------------------------------------------------

def test_quantize_examples():
    assert quantize_array(np.array([1.7]), 2.0).tolist() == [3]
    assert np.float32(3) / np.float32(2.0) == 1.5
    assert quantize_array(np.array([-0.25]), 1.0).tolist() == [0]
    assert round_half_away(np.array([0.5, -0.5, 1.5, -2.5])).tolist() == [1, -1, 2, -3]


def test_quantize_symbol_range():
    with pytest.raises(ShapeError):
        quantize_array(np.array([40000.0]), 1.0)


def test_pyramid_quantize_dequantize():
    pyr = pyramid_from_planes([np.full((2, 2), 1.7)] * 4, 1, (4, 4))
    q = quantize(pyr, 2.0)
    assert all(np.all(s.plane == 3) for s in q.subbands)
    d = dequantize(q, 2.0)
    assert all(np.all(s.plane == 1.5) for s in d.subbands)
    with pytest.raises(ShapeError):
        quantize(pyr, 0.0)


def test_ste_gradient_is_delta():
    y = parameter(np.array([0.3, -1.2, 2.6]))
    delta = parameter(np.array([1.7]))
    q = quantize_ste(y, delta)
    np.testing.assert_array_equal(q.data, round_half_away(np.array([0.3, -1.2, 2.6], np.float32) * np.float32(1.7)))
    ops.total(q).backward()
    # d q / d y = delta exactly
    np.testing.assert_array_equal(y.grad, np.full(3, np.float32(1.7)))
    assert delta.grad[0] == pytest.approx(0.3 - 1.2 + 2.6, abs=1e-6)


def test_dequantize_tensor_divides():
    out = dequantize_tensor(Tensor(np.array([3.0])), Tensor(np.array([2.0])))
    assert out.data.tolist() == [1.5]


def test_lifting_gradients_float64():
    t = random_transform(3, levels=2, width=4)
    x = Tensor(np.random.default_rng(3).normal(size=(1, 1, 8, 8)))
    params = [(f"{n}.{k}", p) for n, net in t.filters.items()
              for k, p in (("skip", net.skip), ("gain", net.gain), ("res1", net.res[1]))]

    def f():
        bands = t.forward(x)
        return ops.total(ops.square(ops.concat([ops.reshape(b, (1, -1)) for b in bands], axis=1)))

    rep = grad_check(f, params, extra=[x] + [w for net in t.filters.values() for w in net.res])
    assert rep.ok(1e-4), rep.worst
