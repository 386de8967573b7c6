"""Post-synthesis refinement network applied to each reconstructed plane."""

from __future__ import annotations

import numpy as np

from wavecc.autodiff import Tensor, no_grad, ops
from wavecc.autodiff.layers import residual_block, uniform_init
from wavecc.pixelio import Plane

# pixel values are level-shifted to about [-128, 128]; keep activations O(1)
INPUT_SCALE = 1.0 / 64


class DequantNet:
    """x + tail(blocks(head(x))): 3x3 head 1->W, residual blocks, 3x3 tail W->1.

    The tail starts at zero so a fresh net is the identity.
    """

    def __init__(self, registry, prefix="dequant", width=32, blocks=6, rng=None):
        rng = rng or np.random.default_rng(0)
        self.head = (registry.add(f"{prefix}.head.weight", uniform_init(rng, (width, 1, 3, 3), 9)),
                     registry.add(f"{prefix}.head.bias", np.zeros(width)))
        self.blocks = []
        for b in range(blocks):
            self.blocks.append(tuple(
                registry.add(f"{prefix}.block{b}.{part}.{kind}", init)
                for part in ("a", "b")
                for kind, init in (("weight", uniform_init(rng, (width, width, 3, 3), 9 * width)),
                                   ("bias", np.zeros(width)))
            ))
        self.tail = (registry.add(f"{prefix}.tail.weight", np.zeros((1, width, 3, 3))),
                     registry.add(f"{prefix}.tail.bias", np.zeros(1)))

    def __call__(self, x):
        h = ops.conv2d(ops.scale(x, INPUT_SCALE), *self.head)
        for wa, ba, wb, bb in self.blocks:
            h = residual_block(h, wa, ba, wb, bb)
        return ops.add(x, ops.scale(ops.conv2d(h, *self.tail), 1.0 / INPUT_SCALE))


def dequant_refine(plane, net: DequantNet):
    """Refine one (H, W) plane; returns a Plane with the same dims."""
    values = np.asarray(getattr(plane, "values", plane), dtype=np.float32)
    with no_grad():
        out = net(Tensor(values[None, None]))
    return Plane(out.data[0, 0], getattr(plane, "label", "gray"))
