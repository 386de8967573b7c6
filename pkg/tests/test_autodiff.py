import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import conv2d_loops, conv_lstm_oracle, masked_conv_loops, reflect
from wavecc.autodiff import (AdamW, ParamRegistry, Tensor, adamw_step, cosine_lr, float64_mode,
                             grad_check, no_grad, ops, parameter)
from wavecc.autodiff import registry as reg
from wavecc.autodiff.layers import conv_lstm_step, residual_block
from wavecc.errors import FormatError, NumericError, ShapeError


def rng():
    return np.random.default_rng(1234)


# --- conv2d ---------------------------------------------------------------

def test_conv_1x1_doubles():
    x = rng().normal(size=(2, 1, 5, 7)).astype(np.float32)
    out = ops.conv2d(Tensor(x), Tensor(np.full((1, 1, 1, 1), 2.0, np.float32)), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, 2 * x)


def test_conv_zero_kernel_gives_bias():
    x = rng().normal(size=(1, 2, 4, 4))
    out = ops.conv2d(Tensor(x), Tensor(np.zeros((3, 2, 3, 3))), Tensor(np.array([0.5, -1.0, 2.0])))
    for o, b in enumerate((0.5, -1.0, 2.0)):
        assert np.all(out.data[0, o] == np.float32(b))


PAD_INDEX = {
    "symmetric": reflect,
    "half": lambda n, m: -n - 1 if n < 0 else (2 * m - 1 - n if n >= m else n),
    "replicate": lambda n, m: min(max(n, 0), m - 1),
    "zero": None,
}


@pytest.mark.parametrize("mode", sorted(PAD_INDEX))
@pytest.mark.parametrize("shape", [((1, 1, 4, 4), (1, 1, 3, 3)), ((2, 3, 5, 6), (4, 3, 3, 3)),
                                   ((1, 2, 6, 5), (3, 2, 3, 1)), ((1, 1, 7, 4), (2, 1, 1, 3))])
def test_conv_matches_loop_oracle(mode, shape):
    r = rng()
    xs, ks = shape
    x, k, b = r.normal(size=xs), r.normal(size=ks), r.normal(size=ks[0])
    with float64_mode():
        out = ops.conv2d(Tensor(x), Tensor(k), Tensor(b), padding=mode)
    np.testing.assert_allclose(out.data, conv2d_loops(x, k, b, PAD_INDEX[mode]), atol=1e-10)


@pytest.mark.parametrize("mode", sorted(PAD_INDEX))
def test_conv_gradients(mode):
    r = rng()
    x = parameter(r.normal(size=(2, 2, 5, 4)))
    k = parameter(r.normal(size=(3, 2, 3, 3)))
    b = parameter(r.normal(size=3))
    w = Tensor(r.normal(size=(2, 3, 5, 4)))
    rep = grad_check(lambda: ops.total(ops.mul(ops.conv2d(x, k, b, padding=mode), w)),
                     [("x", x), ("k", k), ("b", b)], extra=[w])
    assert rep.ok(1e-6), rep.worst


def test_conv_rejects_channel_mismatch():
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


# --- masked conv ------------------------------------------------------------

def test_mask_a_ignores_centre():
    x = np.zeros((1, 1, 5, 5))
    x[0, 0, 2, 3] = 7.0
    k = rng().normal(size=(1, 1, 3, 3))
    out = ops.masked_conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(1)), "A").data
    assert out[0, 0, 2, 3] == 0.0


def test_mask_a_2x2_hand_values():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    k = np.arange(1.0, 10.0).reshape(1, 1, 3, 3)
    with float64_mode():
        out = ops.masked_conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(1)), "A").data[0, 0]
    # taps: above-left 1, above 2, above-right 3, left 4
    expected = np.array([[0.0, 4 * 1.0], [2 * 1.0 + 3 * 2.0, 1 * 1.0 + 2 * 2.0 + 4 * 3.0]])
    np.testing.assert_allclose(out, expected)
    np.testing.assert_allclose(out, masked_conv_loops(x, k, np.zeros(1), "A")[0, 0])


def test_mask_b_identity_centre():
    x = rng().normal(size=(1, 1, 6, 5)).astype(np.float32)
    k = np.zeros((1, 1, 3, 3), np.float32)
    k[0, 0, 1, 1] = 1
    out = ops.masked_conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(1)), "B")
    np.testing.assert_array_equal(out.data, x)


@pytest.mark.parametrize("mask", ["A", "B"])
def test_masked_conv_matches_oracle(mask):
    r = rng()
    x, k, b = r.normal(size=(1, 2, 5, 6)), r.normal(size=(3, 2, 3, 3)), r.normal(size=3)
    with float64_mode():
        out = ops.masked_conv2d(Tensor(x), Tensor(k), Tensor(b), mask)
    np.testing.assert_allclose(out.data, masked_conv_loops(x, k, b, mask), atol=1e-10)


def test_masked_conv_rejects_5x5():
    with pytest.raises(ShapeError):
        ops.masked_conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 5, 5))))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 5), st.integers(0, 5), st.sampled_from("AB"))
def test_masked_conv_is_causal(r, c, mask):
    gen = np.random.default_rng(r * 7 + c)
    x = gen.normal(size=(1, 1, 6, 6))
    k = gen.normal(size=(4, 1, 3, 3))
    base = ops.masked_conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(4)), mask).data
    x2 = x.copy()
    x2[0, 0, r, c] += 5.0
    pert = ops.masked_conv2d(Tensor(x2), Tensor(k), Tensor(np.zeros(4)), mask).data
    # A: output at j ignores x[j]; B: only outputs before j are guaranteed
    keep = r * 6 + c + (1 if mask == "A" else 0)
    np.testing.assert_array_equal(base.reshape(4, -1)[:, :keep], pert.reshape(4, -1)[:, :keep])


# --- conv-LSTM ----------------------------------------------------------------

def test_lstm_zero_weights_zero_state():
    x = Tensor(rng().normal(size=(1, 1, 4, 4)))
    z = Tensor(np.zeros((1, 2, 4, 4)))
    h, (h2, c) = conv_lstm_step(x, (z, z), Tensor(np.zeros((8, 3, 3, 3))), Tensor(np.zeros(8)))
    assert np.all(h.data == 0) and np.all(c.data == 0)


def test_lstm_forget_saturation_keeps_cell():
    c0 = rng().uniform(-1, 1, size=(1, 2, 4, 4)).astype(np.float32)
    bias = np.zeros(8, np.float32)
    bias[2:4] = 10.0
    bias[0:2] = -10.0
    x = Tensor(rng().normal(size=(1, 1, 4, 4)))
    _, (_, c) = conv_lstm_step(x, (Tensor(np.zeros_like(c0)), Tensor(c0)),
                               Tensor(np.zeros((8, 3, 3, 3))), Tensor(bias))
    np.testing.assert_allclose(c.data, c0, atol=1e-4)


def test_lstm_matches_oracle():
    r = rng()
    x, h, c = r.normal(size=(1, 2, 5, 4)), r.normal(size=(1, 3, 5, 4)), r.normal(size=(1, 3, 5, 4))
    k, b = r.normal(size=(12, 5, 3, 3)) * 0.3, r.normal(size=12)
    with float64_mode():
        hn, (_, cn) = conv_lstm_step(Tensor(x), (Tensor(h), Tensor(c)), Tensor(k), Tensor(b))
    ho, co = conv_lstm_oracle(x, h, c, k, b)
    np.testing.assert_allclose(hn.data, ho, atol=1e-10)
    np.testing.assert_allclose(cn.data, co, atol=1e-10)


def test_lstm_state_mismatch():
    with pytest.raises(ShapeError):
        z = Tensor(np.zeros((1, 2, 4, 4)))
        conv_lstm_step(Tensor(np.zeros((1, 1, 8, 8))), (z, z), Tensor(np.zeros((8, 3, 3, 3))),
                       Tensor(np.zeros(8)))


def test_lstm_gradients():
    r = rng()
    x = Tensor(r.normal(size=(1, 1, 4, 4)))
    h, c = Tensor(r.normal(size=(1, 2, 4, 4))), Tensor(r.normal(size=(1, 2, 4, 4)))
    k, b = parameter(r.normal(size=(8, 3, 3, 3)) * 0.3), parameter(r.normal(size=8))

    def f():
        hn, (_, cn) = conv_lstm_step(x, (h, c), k, b)
        return ops.add(ops.total(ops.square(hn)), ops.total(cn))

    rep = grad_check(f, [("k", k), ("b", b)], extra=[x, h, c])
    assert rep.ok(1e-3), rep.worst


# --- elementwise ops ------------------------------------------------------------

def test_softmax_equal_logits():
    out = ops.softmax(Tensor(np.zeros((1, 3, 2, 2))), axis=1)
    np.testing.assert_allclose(out.data, 1 / 3, rtol=1e-6)


def test_upsample_nearest():
    out = ops.upsample2x(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])))
    expected = [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]
    np.testing.assert_array_equal(out.data[0, 0], expected)


def test_log_of_nonpositive_raises():
    with pytest.raises(NumericError):
        ops.log(Tensor(np.array([1.0, 0.0])))


UNARY = {
    "tanh": ops.tanh, "sigmoid": ops.sigmoid, "exp": ops.exp, "square": ops.square,
    "log": lambda t: ops.log(ops.add(ops.square(t), 0.5)),
    "softmax": lambda t: ops.softmax(t, axis=1),
    "upsample": ops.upsample2x, "neg": ops.neg, "scale": lambda t: ops.scale(t, 1.7),
    "clamp": lambda t: ops.clamp(t, -0.5, 0.5),
    "take": lambda t: ops.take(t, 3, 1, 4, 2),
    "interleave": lambda t: ops.interleave(t, ops.scale(t, 2.0), axis=2),
    "concat": lambda t: ops.concat([t, ops.square(t)], axis=1),
    "sum_axes": lambda t: ops.sum_axes(t, (2, 3)),
    "reshape": lambda t: ops.reshape(t, (3, -1)),
    "mean": ops.mean,
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    r = rng()
    x = parameter(r.normal(size=(1, 3, 4, 4)))
    fn = UNARY[name]
    out_shape = fn(x).shape
    w = Tensor(r.normal(size=out_shape))
    rep = grad_check(lambda: ops.total(ops.mul(fn(x), w)), [("x", x)], extra=[w], samples=16)
    assert rep.ok(1e-6), rep.worst


@pytest.mark.parametrize("op", [ops.add, ops.sub, ops.mul, ops.div])
@pytest.mark.parametrize("b_shape", [(2, 3, 4, 4), ()])
def test_binary_gradients(op, b_shape):
    r = rng()
    a = parameter(r.normal(size=(2, 3, 4, 4)))
    b = parameter(r.uniform(0.5, 2.0, size=b_shape))
    rep = grad_check(lambda: ops.total(ops.square(op(a, b))), [("a", a), ("b", b)])
    assert rep.ok(1e-6), rep.worst


def test_gmm_mass_gradients():
    r = rng()
    w = parameter(r.dirichlet(np.ones(3), size=(1, 4, 4)).transpose(0, 3, 1, 2))
    mu = parameter(r.normal(size=(1, 3, 4, 4)))
    sg = parameter(r.uniform(0.5, 2.0, size=(1, 3, 4, 4)))
    s = parameter(np.round(r.normal(size=(1, 1, 4, 4)) * 2))
    rep = grad_check(lambda: ops.total(ops.log(ops.gmm_mass(w, mu, sg, s))),
                     [("w", w), ("mu", mu), ("sigma", sg), ("s", s)], samples=10)
    # some tail-bin gradients are ~1e-8, where differencing noise is ~1e-3 relative
    assert rep.ok(1e-2), rep.worst


def test_residual_block_gradients():
    r = rng()
    x = parameter(r.normal(size=(1, 2, 4, 4)))
    ka, kb = parameter(r.normal(size=(2, 2, 3, 3)) * 0.3), parameter(r.normal(size=(2, 2, 3, 3)) * 0.3)
    ba, bb = parameter(r.normal(size=2)), parameter(r.normal(size=2))
    rep = grad_check(lambda: ops.total(ops.square(residual_block(x, ka, ba, kb, bb))),
                     [("x", x), ("ka", ka), ("kb", kb), ("ba", ba), ("bb", bb)])
    assert rep.ok(1e-5), rep.worst


def test_round_ste_identity_gradient():
    x = parameter(np.array([0.2, 1.7, -2.5]))
    out = ops.round_ste(x)
    # ties go away from zero
    np.testing.assert_array_equal(out.data, [0.0, 2.0, -3.0])
    ops.total(out).backward()
    np.testing.assert_array_equal(x.grad, np.ones(3))


# --- backward ------------------------------------------------------------------

def test_grad_of_weighted_sum_is_input():
    x = np.arange(6.0).reshape(2, 3)
    w = parameter(np.zeros((2, 3)))
    ops.total(ops.mul(w, Tensor(x))).backward()
    np.testing.assert_array_equal(w.grad, x)


def test_grad_of_mse():
    x = parameter(rng().normal(size=(3, 4)))
    t = np.random.default_rng(99).normal(size=(3, 4))
    ops.mean(ops.square(ops.sub(x, Tensor(t)))).backward()
    np.testing.assert_allclose(x.grad, 2 * (x.data - t.astype(np.float32)) / 12, rtol=1e-5)


def test_backward_requires_scalar():
    x = parameter(np.ones((2, 2)))
    with pytest.raises(ShapeError):
        ops.square(x).backward()


def test_no_grad_records_nothing():
    x = parameter(np.ones(3))
    with no_grad():
        y = ops.square(x)
    assert not y.requires_grad


def test_grad_check_quadratic_is_tight():
    x = parameter(rng().normal(size=5))
    rep = grad_check(lambda: ops.total(ops.square(x)), [("x", x)])
    assert rep.max_rel_error < 1e-8


# --- optimizer -------------------------------------------------------------------

def test_adamw_zero_grad_no_decay_is_noop():
    p = parameter(np.array([1.0, -2.0]))
    p.grad = np.zeros(2, np.float32)
    AdamW([("p", p)]).step(0.1)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adamw_first_step_hand_value():
    theta, _, _ = adamw_step(np.array(0.0), np.array(1.0), 0.0, 0.0, 1, 0.1)
    assert abs(theta - (-0.1)) < 1e-7
    p = parameter(np.array([0.0]))
    p.grad = np.ones(1, np.float32)
    AdamW([("p", p)]).step(0.1)
    assert abs(p.data[0] + 0.1) < 1e-6


def test_adamw_pure_decay():
    theta, _, _ = adamw_step(np.array(3.0), np.array(0.0), 0.0, 0.0, 1, 1.0, weight_decay=0.1)
    assert abs(theta - 2.7) < 1e-12


def test_adamw_rejects_nonpositive_lr():
    with pytest.raises(NumericError):
        AdamW([("p", parameter(np.zeros(1)))]).step(0.0)


def test_cosine_schedule_endpoints():
    assert cosine_lr(0, 100, 1e-3, 1e-6) == pytest.approx(1e-3)
    assert cosine_lr(100, 100, 1e-3, 1e-6) == pytest.approx(1e-6)
    assert cosine_lr(50, 100, 1e-3, 1e-6) == pytest.approx((1e-3 + 1e-6) / 2)
    vals = [cosine_lr(s, 100, 1e-3, 1e-6) for s in range(101)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


# --- registry --------------------------------------------------------------------

def _registry():
    r = ParamRegistry()
    r.add("lifting.p1.skip", np.array([0.0, 1.5, 1.5]))
    r.add("ctx.y.fuse.i01.head2.weight", rng().normal(size=(9, 4, 1, 1)))
    return r


def test_registry_round_trip_bit_identical(tmp_path):
    src = _registry()
    path = tmp_path / "w.wccw"
    reg.save(src, path)
    dst = _registry()
    for _, t in dst.items():
        t.data = np.zeros_like(t.data)
    reg.load(dst, path)
    for name, t in src.items():
        assert t.data.tobytes() == dst[name].data.tobytes()
    assert src.digest() == dst.digest()


def test_registry_truncated_file_leaves_registry_untouched(tmp_path):
    path = tmp_path / "w.wccw"
    reg.save(_registry(), path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-3])
    dst = _registry()
    before = {n: t.data.copy() for n, t in dst.items()}
    with pytest.raises(FormatError):
        reg.load(dst, path)
    for n, t in dst.items():
        np.testing.assert_array_equal(t.data, before[n])


def test_registry_rejects_bad_magic_and_shape():
    with pytest.raises(FormatError):
        reg.parse(b"XXXX" + reg.dumps(_registry())[4:])
    other = ParamRegistry()
    other.add("lifting.p1.skip", np.zeros(4))
    other.add("ctx.y.fuse.i01.head2.weight", np.zeros((9, 4, 1, 1)))
    with pytest.raises(ShapeError):
        reg.assign(other, reg.parse(reg.dumps(_registry())))


def test_registry_missing_and_unknown_names():
    arrays = reg.parse(reg.dumps(_registry()))
    smaller = ParamRegistry()
    smaller.add("lifting.p1.skip", np.zeros(3))
    with pytest.raises(FormatError):
        reg.assign(smaller, arrays)
    arrays.pop("lifting.p1.skip")
    with pytest.raises(FormatError):
        reg.assign(_registry(), arrays)


def test_registry_duplicate_name():
    r = _registry()
    with pytest.raises(Exception):
        r.add("lifting.p1.skip", np.zeros(3))


def test_registry_subset_order():
    r = _registry()
    assert [n for n, _ in r.subset("ctx.")] == ["ctx.y.fuse.i01.head2.weight"]
    assert list(r) == ["lifting.p1.skip", "ctx.y.fuse.i01.head2.weight"]
    assert math.isfinite(float(r.digest()))
