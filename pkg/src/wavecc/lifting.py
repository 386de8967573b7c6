"""Trainable lifting-scheme wavelet transform and scalar quantization.

Each level splits a signal into even/odd samples and runs two
predict/update pairs::

    hp  = odd  - P1(even)
    ev  = even + U1(hp)
    hp' = hp   - P2(ev)
    lp  = ev   + U2(hp')

Every P/U is a 3-tap linear filter plus a small tanh residual network scaled
by a gain that starts at zero, so a freshly initialised transform is exactly
the CDF 9/7 lifting factorisation (without the final scaling step).  The
inverse undoes the steps in reverse order, which makes reconstruction exact
up to float roundoff for any filter weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from wavecc.autodiff import Tensor, no_grad, ops
from wavecc.autodiff.layers import uniform_init
from wavecc.errors import ShapeError

CDF97_ALPHA = -1.586134342059924
CDF97_BETA = -0.052980118572961
CDF97_GAMMA = 0.882911075530934
CDF97_DELTA = 0.443506852043971

# Skip-path taps at offsets (-1, 0, +1) of the filter input.  Predict filters
# see even samples n and n+1 around odd sample n; update filters see the
# highpass samples n-1 and n around even sample n.
CDF97_TAPS = {
    "p1": (0.0, -CDF97_ALPHA, -CDF97_ALPHA),
    "u1": (CDF97_BETA, CDF97_BETA, 0.0),
    "p2": (0.0, -CDF97_GAMMA, -CDF97_GAMMA),
    "u2": (CDF97_DELTA, CDF97_DELTA, 0.0),
}

ORIENTATIONS = ("LL", "HL", "LH", "HH")
MAX_SYMBOL = 2 ** 15 - 1

# samples are centred before the transform so flat mid-gray planes map to 0
LEVEL_SHIFT = 128.0

# Filters run on polyphase subsequences; repeating the edge sample there is
# the same as whole-sample symmetric extension of the full-rate signal.
LIFTING_PADDING = "half"


def coding_order(levels: int):
    """[(level, orientation)] from LL_D down to HH_1."""
    if levels < 1:
        raise ShapeError("need at least one decomposition level", levels=levels)
    order = [(levels, "LL"), (levels, "HL"), (levels, "LH"), (levels, "HH")]
    for level in range(levels - 1, 0, -1):
        order += [(level, "HL"), (level, "LH"), (level, "HH")]
    return order


class LiftingFilterNet:
    """skip(x) + gain * res(x) along one axis of a (B, 1, H, W) tensor."""

    def __init__(self, registry, prefix, width=16, rng=None):
        rng = rng or np.random.default_rng(0)
        self.prefix = prefix
        self.skip = registry.add(f"{prefix}.skip.weight", np.zeros(3))
        self.res = [
            registry.add(f"{prefix}.res0.weight", uniform_init(rng, (width, 1, 3), 3)),
            registry.add(f"{prefix}.res1.weight", uniform_init(rng, (width, width, 3), 3 * width)),
            registry.add(f"{prefix}.res2.weight", uniform_init(rng, (1, width, 3), 3 * width)),
        ]
        self.gain = registry.add(f"{prefix}.gain", np.zeros(1))

    @staticmethod
    def _kernel(weight, axis):
        cout, cin = (1, 1) if weight.ndim == 1 else weight.shape[:2]
        shape = (cout, cin, 1, 3) if axis == 3 else (cout, cin, 3, 1)
        return ops.reshape(weight, shape)

    def __call__(self, x, axis):
        out = ops.conv2d(x, self._kernel(self.skip, axis), padding=LIFTING_PADDING)
        h = x
        for k, weight in enumerate(self.res):
            h = ops.conv2d(h, self._kernel(weight, axis), padding=LIFTING_PADDING)
            if k < len(self.res) - 1:
                h = ops.tanh(h)
        return ops.add(out, ops.mul(self.gain, h))


def _split(x, axis):
    if x.shape[axis] % 2:
        raise ShapeError("lifting needs an even-length axis", axis=axis, length=x.shape[axis])
    return ops.take(x, axis, 0, None, 2), ops.take(x, axis, 1, None, 2)


class LiftingTransform:
    """Two predict/update pairs shared by every level, orientation and component."""

    def __init__(self, registry, levels=4, width=16, rng=None, prefix="lifting"):
        rng = rng or np.random.default_rng(0)
        self.levels = levels
        self.filters = {name: LiftingFilterNet(registry, f"{prefix}.{name}", width, rng)
                        for name in ("p1", "u1", "p2", "u2")}
        self.init_cdf97()

    def init_cdf97(self):
        for name, net in self.filters.items():
            net.skip.data[...] = CDF97_TAPS[name]
            net.gain.data[...] = 0.0

    # 1D --------------------------------------------------------------------
    def lift_forward(self, x, axis):
        f = self.filters
        even, odd = _split(x, axis)
        hp = ops.sub(odd, f["p1"](even, axis))
        ev = ops.add(even, f["u1"](hp, axis))
        hp = ops.sub(hp, f["p2"](ev, axis))
        lp = ops.add(ev, f["u2"](hp, axis))
        return lp, hp

    def lift_inverse(self, lp, hp, axis):
        if lp.shape != hp.shape:
            raise ShapeError("lowpass and highpass halves differ", lp=lp.shape, hp=hp.shape)
        f = self.filters
        ev = ops.sub(lp, f["u2"](hp, axis))
        hp = ops.add(hp, f["p2"](ev, axis))
        even = ops.sub(ev, f["u1"](hp, axis))
        odd = ops.add(hp, f["p1"](even, axis))
        return ops.interleave(even, odd, axis)

    # 2D --------------------------------------------------------------------
    def _analysis_level(self, x):
        lo, hi = self.lift_forward(x, axis=3)
        b = x.shape[0]
        both = ops.concat([lo, hi], axis=0)
        low_v, high_v = self.lift_forward(both, axis=2)
        ll = ops.take(low_v, 0, 0, b)
        hl = ops.take(low_v, 0, b, 2 * b)
        lh = ops.take(high_v, 0, 0, b)
        hh = ops.take(high_v, 0, b, 2 * b)
        return ll, hl, lh, hh

    def _synthesis_level(self, ll, hl, lh, hh):
        b = ll.shape[0]
        low_v = ops.concat([ll, hl], axis=0)
        high_v = ops.concat([lh, hh], axis=0)
        both = self.lift_inverse(low_v, high_v, axis=2)
        lo = ops.take(both, 0, 0, b)
        hi = ops.take(both, 0, b, 2 * b)
        return self.lift_inverse(lo, hi, axis=3)

    def forward(self, x):
        """(B, 1, H, W) tensor -> list of 3D+1 subband tensors in coding order."""
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError("transform input must be (B, 1, H, W)", shape=x.shape)
        step = 2 ** self.levels
        if x.shape[2] % step or x.shape[3] % step:
            raise ShapeError("plane dims must be multiples of 2^levels; pad first",
                             dims=x.shape[2:], multiple=step)
        details = {}
        ll = x
        for level in range(1, self.levels + 1):
            ll, hl, lh, hh = self._analysis_level(ll)
            details[level] = {"HL": hl, "LH": lh, "HH": hh}
        details[self.levels]["LL"] = ll
        return [details[level][orient] for level, orient in coding_order(self.levels)]

    def inverse(self, subbands):
        order = coding_order(self.levels)
        if len(subbands) != len(order):
            raise ShapeError("wrong number of subbands", expected=len(order), found=len(subbands))
        bands = {key: s for key, s in zip(order, subbands)}
        ll = bands[(self.levels, "LL")]
        for level in range(self.levels, 0, -1):
            ll = self._synthesis_level(ll, bands[(level, "HL")], bands[(level, "LH")],
                                       bands[(level, "HH")])
        return ll


# ---------------------------------------------------------------------------
# numpy-level pyramids
# ---------------------------------------------------------------------------

@dataclass
class Subband:
    plane: np.ndarray
    level: int
    orientation: str
    order_index: int


@dataclass
class SubbandPyramid:
    subbands: list
    padded_dims: tuple
    original_dims: tuple = None
    levels: int = field(default=4)

    def planes(self):
        return [s.plane for s in self.subbands]

    def coefficient_count(self):
        return sum(s.plane.size for s in self.subbands)


def pyramid_from_planes(planes, levels, padded_dims, original_dims=None):
    subbands = [Subband(np.asarray(p), lvl, orient, i + 1)
                for i, (p, (lvl, orient)) in enumerate(zip(planes, coding_order(levels)))]
    return SubbandPyramid(subbands, tuple(padded_dims), original_dims, levels)


def dwt2d_forward(plane, transform: LiftingTransform, original_dims=None) -> SubbandPyramid:
    """Transform one (H, W) array; no gradient is recorded."""
    values = np.asarray(getattr(plane, "values", plane), dtype=np.float32)
    with no_grad():
        bands = transform.forward(Tensor(values[None, None]))
    return pyramid_from_planes([b.data[0, 0] for b in bands], transform.levels,
                               values.shape, original_dims)


def dwt2d_inverse(pyramid: SubbandPyramid, transform: LiftingTransform) -> np.ndarray:
    with no_grad():
        bands = [Tensor(np.asarray(s.plane, dtype=np.float32)[None, None])
                 for s in pyramid.subbands]
        out = transform.inverse(bands)
    return out.data[0, 0]


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------

def round_half_away(x):
    x = np.asarray(x)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_array(values, delta):
    q = round_half_away(np.asarray(values, dtype=np.float32) * np.float32(delta))
    if q.size and np.max(np.abs(q)) > MAX_SYMBOL:
        raise ShapeError("quantized symbol exceeds the 16-bit alphabet",
                         max_abs=int(np.max(np.abs(q))))
    return q.astype(np.int32)


def quantize(pyramid: SubbandPyramid, delta: float) -> SubbandPyramid:
    if not delta > 0:
        raise ShapeError("quantizer step must be positive", delta=delta)
    return pyramid_from_planes([quantize_array(s.plane, delta) for s in pyramid.subbands],
                               pyramid.levels, pyramid.padded_dims, pyramid.original_dims)


def dequantize(pyramid: SubbandPyramid, delta: float) -> SubbandPyramid:
    d = np.float32(delta)
    return pyramid_from_planes([s.plane.astype(np.float32) / d for s in pyramid.subbands],
                               pyramid.levels, pyramid.padded_dims, pyramid.original_dims)


def quantize_ste(y, delta, mode="round"):
    """y * delta rounded; the rounding has an identity gradient.

    ``mode='identity'`` skips rounding entirely (used for finite-difference
    checks, where the rounding discontinuity would dominate).
    """
    scaled = ops.mul(y, delta)
    if mode == "identity":
        return scaled
    return ops.round_ste(scaled)


def dequantize_tensor(symbols, delta):
    return ops.div(symbols, delta)
