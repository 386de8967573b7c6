"""AdamW with decoupled weight decay, and the cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from wavecc.errors import NumericError


class AdamW:
    """AdamW over a fixed, ordered set of named parameters.

    Weight decay is applied directly to the weights (``theta -= lr*wd*theta``)
    before the bias-corrected moment update.  Names in ``no_decay`` are
    excluded from decay.
    """

    def __init__(self, params, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0, no_decay=()):
        self.params = dict(params)
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.no_decay = set(no_decay)
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr):
        if not lr > 0:
            raise NumericError("learning rate must be positive", lr=lr)
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay and name not in self.no_decay:
                p.data -= p.data.dtype.type(lr * self.weight_decay) * p.data
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= (lr * update).astype(p.data.dtype)


def adamw_step(theta, grad, m, v, step, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
    """Pure single-tensor AdamW update; returns (theta, m, v)."""
    if not lr > 0:
        raise NumericError("learning rate must be positive", lr=lr)
    b1, b2 = betas
    m = b1 * m + (1.0 - b1) * grad
    v = b2 * v + (1.0 - b2) * grad * grad
    theta = theta - lr * weight_decay * theta
    m_hat = m / (1.0 - b1 ** step)
    v_hat = v / (1.0 - b2 ** step)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


def cosine_lr(step, total_steps, lr0=1e-4, lr_min=1e-6):
    """Cosine decay from lr0 at step 0 to lr_min at ``total_steps``."""
    if total_steps <= 0:
        return lr0
    t = min(max(step, 0), total_steps) / total_steps
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * t))
