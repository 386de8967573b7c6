"""Differentiable primitives.

Only the operations the codec networks need are provided.  Broadcasting is
restricted to scalar-with-tensor; the bias-over-channel case lives inside
``conv2d``.  Everything else requires identical shapes.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr

from wavecc.autodiff.tensor import Tensor, as_tensor, make_result
from wavecc.errors import NumericError, ShapeError

PADDING_MODES = ("zero", "symmetric", "half", "replicate")
_NP_PAD = {"symmetric": "reflect", "half": "symmetric", "replicate": "edge"}


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def _binary_shapes(a, b):
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError("operands must share a shape or one must be a scalar",
                     left=a.shape, right=b.shape)


def _reduce_to(grad, like):
    if grad.shape == like.shape:
        return grad
    return np.asarray(grad.sum()).reshape(like.shape).astype(like.data.dtype, copy=False)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b)

    def backward(g):
        return _reduce_to(g, a), _reduce_to(g, b)

    return make_result(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b)

    def backward(g):
        return _reduce_to(g, a), _reduce_to(-g, b)

    return make_result(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b)

    def backward(g):
        return _reduce_to(g * b.data, a), _reduce_to(g * a.data, b)

    return make_result(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        gb = -g * out / b.data
        return _reduce_to(ga, a), _reduce_to(gb, b)

    return make_result(out, (a, b), backward)


def neg(a):
    return make_result(-a.data, (a,), lambda g: (-g,))


def scale(a, factor: float):
    """Multiply by a Python constant."""
    f = a.data.dtype.type(factor)
    return make_result(a.data * f, (a,), lambda g: (g * f,))


def square(a):
    return make_result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def tanh(a):
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    out = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return make_result(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a):
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    if not np.all(np.isfinite(out)):
        raise NumericError("exp overflow", max_input=float(np.max(a.data)))
    return make_result(out, (a,), lambda g: (g * out,))


def log(a):
    if np.any(a.data <= 0) or not np.all(np.isfinite(a.data)):
        raise NumericError("log of non-positive or non-finite value",
                           min_input=float(np.min(a.data)))
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,))


def clamp(a, lo, hi):
    """Clip to [lo, hi]; gradient passes inside the interval, zero outside."""
    out = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)
    return make_result(out, (a,), lambda g: (g * inside,))


def round_ste(a):
    """Round half away from zero; the backward pass treats rounding as identity."""
    out = np.sign(a.data) * np.floor(np.abs(a.data) + 0.5)
    return make_result(out, (a,), lambda g: (g,))


def total(a):
    """Sum of all elements as a scalar tensor."""
    return make_result(np.asarray(a.data.sum(), dtype=a.data.dtype).reshape(1), (a,),
                       lambda g: (np.broadcast_to(g.reshape(()), a.shape).copy(),))


def mean(a):
    n = a.data.size
    return scale(total(a), 1.0 / n)


def sum_axes(a, axes):
    """Sum over the given axes, keeping them as length-1 dimensions."""
    out = a.data.sum(axis=axes, keepdims=True)
    return make_result(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a, shape):
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def take(a, axis: int, start: int, stop: int | None = None, step: int = 1):
    """Strided slice along one axis (used for channel picks and even/odd splits)."""
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop, step)
    index = tuple(index)
    out = np.ascontiguousarray(a.data[index])

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return make_result(out, (a,), backward)


def interleave(even, odd, axis: int):
    """Inverse of the even/odd split: out[0::2] = even, out[1::2] = odd."""
    if even.shape != odd.shape:
        raise ShapeError("interleave needs equal halves", even=even.shape, odd=odd.shape)
    shape = list(even.shape)
    shape[axis] *= 2
    out = np.empty(shape, dtype=np.result_type(even.data, odd.data))
    ev = [slice(None)] * even.ndim
    od = [slice(None)] * even.ndim
    ev[axis] = slice(0, None, 2)
    od[axis] = slice(1, None, 2)
    ev, od = tuple(ev), tuple(od)
    out[ev] = even.data
    out[od] = odd.data
    return make_result(out, (even, odd),
                       lambda g: (np.ascontiguousarray(g[ev]), np.ascontiguousarray(g[od])))


def concat(tensors, axis: int = 1):
    tensors = [as_tensor(t) for t in tensors]
    for t in tensors[1:]:
        other = [d for i, d in enumerate(t.shape) if i != axis]
        first = [d for i, d in enumerate(tensors[0].shape) if i != axis]
        if other != first:
            raise ShapeError("concat extents differ off the concat axis",
                             axis=axis, shapes=[x.shape for x in tensors])
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            parts.append(np.ascontiguousarray(g[tuple(index)]))
        return tuple(parts)

    return make_result(out, tensors, backward)


def upsample2x(a):
    """Nearest-neighbour x2 upsampling of the two trailing axes."""
    out = a.data.repeat(2, axis=-2).repeat(2, axis=-1)

    def backward(g):
        *lead, h, w = g.shape
        return (g.reshape(*lead, h // 2, 2, w // 2, 2).sum(axis=(-3, -1)),)

    return make_result(out, (a,), backward)


def softmax(a, axis: int = 1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return make_result(out, (a,), backward)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _pad_index(n: int, before: int, after: int, mode: str):
    """Source index for every padded position along one axis."""
    np_mode = _NP_PAD[mode]
    if np_mode == "reflect" and n < 2:
        np_mode = "edge"
    return np.pad(np.arange(n), (before, after), mode=np_mode)


def pad2d(x: np.ndarray, ph: int, pw: int, mode: str, axes=(2, 3)):
    """Pad two spatial axes (NCHW by default) by ph/pw on both sides."""
    if mode not in PADDING_MODES:
        raise ShapeError("unknown padding mode", mode=mode)
    if ph == 0 and pw == 0:
        return x
    ah, aw = axes
    if mode == "zero":
        widths = [(0, 0)] * x.ndim
        widths[ah], widths[aw] = (ph, ph), (pw, pw)
        return np.pad(x, widths)
    x = np.take(x, _pad_index(x.shape[ah], ph, ph, mode), axis=ah)
    return np.take(x, _pad_index(x.shape[aw], pw, pw, mode), axis=aw)


def _fold_axis(g, n, pad, mode, axis):
    """Adjoint of padding one axis: centre plus border rows added to their sources."""
    if pad == 0:
        return g
    centre = [slice(None)] * g.ndim
    centre[axis] = slice(pad, pad + n)
    out = g[tuple(centre)].copy()
    if mode == "zero":
        return out
    src = _pad_index(n, pad, pad, mode)
    dst = [slice(None)] * g.ndim
    for k in list(range(pad)) + list(range(pad + n, n + 2 * pad)):
        centre[axis] = k
        dst[axis] = src[k]
        out[tuple(dst)] += g[tuple(centre)]
    return out


def unpad2d(g: np.ndarray, shape, ph: int, pw: int, mode: str, axes=(2, 3)):
    """Adjoint of ``pad2d``: fold border gradients back onto their sources."""
    ah, aw = axes
    g = _fold_axis(g, shape[ah], ph, mode, ah)
    return _fold_axis(g, shape[aw], pw, mode, aw)


def _tap_product(a, k):
    """a (..., Cin) times k (Cin, Cout); broadcasting when a side has one channel."""
    if k.shape[0] == 1:
        return a * k[0]
    if k.shape[1] == 1:
        return (a @ k[:, 0])[..., None]
    return a @ k


def conv2d(x, kernel, bias=None, padding: str = "symmetric"):
    """'Same' 2D cross-correlation.

    x: (B, Cin, H, W); kernel: (Cout, Cin, kh, kw) with odd kh, kw;
    bias: (Cout,) or None.  Internally channels-last, one matmul per tap.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError("conv2d expects 4D input and kernel", input=x.shape, kernel=kernel.shape)
    b, cin, h, w = x.shape
    cout, kcin, kh, kw = kernel.shape
    if kcin != cin:
        raise ShapeError("kernel input channels do not match input", dimension="channel",
                         input=cin, kernel=kcin)
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("kernel extents must be odd", kernel=kernel.shape)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError("bias must have one entry per output channel",
                             bias=bias.shape, out_channels=cout)
    if padding not in PADDING_MODES:
        raise ShapeError("unknown padding mode", mode=padding)
    ph, pw = kh // 2, kw // 2
    dtype = np.result_type(x.data, kernel.data)
    taps = np.ascontiguousarray(kernel.data.transpose(2, 3, 1, 0), dtype=dtype)  # kh,kw,Cin,Cout
    xl = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1), dtype=dtype)
    xp = pad2d(xl, ph, pw, padding, axes=(1, 2))
    out = np.zeros((b, h, w, cout), dtype=dtype)
    for di in range(kh):
        for dj in range(kw):
            out += _tap_product(xp[:, di:di + h, dj:dj + w, :], taps[di, dj])
    if bias is not None:
        out += bias.data
    result = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(g):
        gl = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
        gflat = gl.reshape(-1, cout)
        gk = gb = gx = None
        if kernel.requires_grad:
            gtaps = np.empty_like(taps)
            for di in range(kh):
                for dj in range(kw):
                    gtaps[di, dj] = xp[:, di:di + h, dj:dj + w, :].reshape(-1, cin).T @ gflat
            gk = np.ascontiguousarray(gtaps.transpose(3, 2, 0, 1)).astype(kernel.data.dtype, copy=False)
        if bias is not None and bias.requires_grad:
            gb = gflat.sum(axis=0)
        if x.requires_grad:
            gxp = np.zeros(xp.shape, dtype=dtype)
            for di in range(kh):
                for dj in range(kw):
                    gxp[:, di:di + h, dj:dj + w, :] += _tap_product(gl, taps[di, dj].T)
            gxl = unpad2d(gxp, xl.shape, ph, pw, padding, axes=(1, 2))
            gx = np.ascontiguousarray(gxl.transpose(0, 3, 1, 2)).astype(x.data.dtype, copy=False)
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return make_result(result, parents, lambda g: backward(g)[:len(parents)])


def raster_mask(kh: int, kw: int, mask_type: str):
    """Causal mask for line-scan order: taps after the centre are zero.

    Mask 'A' also removes the centre tap, mask 'B' keeps it.
    """
    if mask_type not in ("A", "B"):
        raise ShapeError("mask type must be 'A' or 'B'", mask_type=mask_type)
    mask = np.ones((kh, kw), dtype=np.float32)
    cy, cx = kh // 2, kw // 2
    mask[cy, cx + (1 if mask_type == "B" else 0):] = 0
    mask[cy + 1:, :] = 0
    return mask


def masked_conv2d(x, kernel, bias=None, mask_type: str = "A"):
    """3x3 raster-causal convolution with zero padding."""
    kernel = as_tensor(kernel)
    if kernel.shape[2:] != (3, 3):
        raise ShapeError("masked convolution needs a 3x3 kernel", kernel=kernel.shape)
    mask = Tensor(raster_mask(3, 3, mask_type).astype(kernel.data.dtype))
    masked = mul(kernel, Tensor(np.broadcast_to(mask.data, kernel.shape).copy()))
    return conv2d(x, masked, bias, padding="zero")


# ---------------------------------------------------------------------------
# discretized Gaussian mixture
# ---------------------------------------------------------------------------

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _normal_pdf(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def bin_masses(mu, sigma, s):
    """Per-component mass of the unit bin centred on s, in float64.

    Tail bins are computed from the upper survival function to avoid
    cancellation when both bin edges sit far above the mean.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    zu = (s + 0.5 - mu) / sigma
    zl = (s - 0.5 - mu) / sigma
    upper = s > mu
    return np.where(upper, ndtr(-zl) - ndtr(-zu), ndtr(zu) - ndtr(zl)), zl, zu


def gmm_mass(weights, means, scales, symbols, floor: float | None = 2.0 ** -16):
    """Discretized mixture mass sum_k w_k (Phi(zu_k) - Phi(zl_k)), floored.

    weights/means/scales: (B, K, H, W); symbols: (B, 1, H, W).  The result
    has the symbols' shape.  Gradients flow to all four inputs; positions
    clamped by the floor get zero gradient.
    """
    w, mu, sg, s = (as_tensor(t) for t in (weights, means, scales, symbols))
    if not (w.shape == mu.shape == sg.shape):
        raise ShapeError("mixture parameter shapes differ", w=w.shape, mu=mu.shape, sigma=sg.shape)
    if s.shape[1] != 1 or s.shape[0] != w.shape[0] or s.shape[2:] != w.shape[2:]:
        raise ShapeError("symbols must be (B,1,H,W) aligned with params", symbols=s.shape, params=w.shape)
    comp, zl, zu = bin_masses(mu.data, sg.data, s.data)
    w64 = w.data.astype(np.float64)
    mass = (w64 * comp).sum(axis=1, keepdims=True)
    floored = np.zeros_like(mass, dtype=bool) if floor is None else mass < floor
    out64 = mass if floor is None else np.maximum(mass, floor)
    dtype = np.result_type(w.data, mu.data, sg.data, s.data)

    def backward(g):
        g64 = np.where(floored, 0.0, g.astype(np.float64))
        pu, pl = _normal_pdf(zu), _normal_pdf(zl)
        inv = 1.0 / sg.data.astype(np.float64)
        gw = g64 * comp
        gmu = g64 * w64 * (pl - pu) * inv
        gsig = g64 * w64 * (pl * zl - pu * zu) * inv
        gs = (g64 * w64 * (pu - pl) * inv).sum(axis=1, keepdims=True)
        return (gw.astype(dtype), gmu.astype(dtype), gsig.astype(dtype), gs.astype(dtype))

    return make_result(out64.astype(dtype), (w, mu, sg, s), backward)
