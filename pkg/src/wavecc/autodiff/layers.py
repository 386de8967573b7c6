"""Composite layers built from the primitives in ``ops``."""

from __future__ import annotations

import math

import numpy as np

from wavecc.autodiff import ops
from wavecc.errors import ShapeError

# gate order inside the stacked convolution output
GATES = ("input", "forget", "candidate", "output")


def conv_lstm_step(x, state, kernel, bias):
    """One convolutional LSTM update.

    Gates come from a single 3x3 convolution over cat(x, h) whose output
    channels are laid out as (input, forget, candidate, output) blocks of
    ``hidden`` channels each.  Returns ``(h_new, (h_new, c_new))``.
    """
    h, c = state
    if h.shape != c.shape:
        raise ShapeError("hidden and cell state differ", h=h.shape, c=c.shape)
    if x.shape[0] != h.shape[0] or x.shape[2:] != h.shape[2:]:
        raise ShapeError("state spatial dims must match the input; upsample the state first",
                         input=x.shape, state=h.shape)
    hidden = h.shape[1]
    if kernel.shape[0] != 4 * hidden:
        raise ShapeError("kernel must produce 4*hidden gate channels",
                         kernel=kernel.shape, hidden=hidden)
    z = ops.conv2d(ops.concat([x, h], axis=1), kernel, bias, padding="symmetric")
    i = ops.sigmoid(ops.take(z, 1, 0, hidden))
    f = ops.sigmoid(ops.take(z, 1, hidden, 2 * hidden))
    g = ops.tanh(ops.take(z, 1, 2 * hidden, 3 * hidden))
    o = ops.sigmoid(ops.take(z, 1, 3 * hidden, 4 * hidden))
    c_new = ops.add(ops.mul(f, c), ops.mul(i, g))
    h_new = ops.mul(o, ops.tanh(c_new))
    return h_new, (h_new, c_new)


def uniform_init(rng, shape, fan_in):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights in float32."""
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def residual_block(x, kernel_a, bias_a, kernel_b, bias_b, padding="symmetric"):
    """x + conv_b(tanh(conv_a(x)))."""
    inner = ops.tanh(ops.conv2d(x, kernel_a, bias_a, padding=padding))
    return ops.add(x, ops.conv2d(inner, kernel_b, bias_b, padding=padding))
