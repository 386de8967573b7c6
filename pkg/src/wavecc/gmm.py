"""Discretized Gaussian-mixture probability model for quantized coefficients.

Probability of integer symbol s is the mixture mass of the unit bin
[s - 1/2, s + 1/2], floored at 2^-16 so the coder never sees an empty
interval.  ``integer_cdf`` turns the masses of a bounded alphabet into the
16-bit frequency table used by the range coder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from wavecc.autodiff import ops
from wavecc.errors import ShapeError

MIXTURES = 3
SIGMA_MIN = 1e-3
SIGMA_MAX = 1e4
PROB_FLOOR = 2.0 ** -16
CDF_BITS = 16
CDF_TOTAL = 1 << CDF_BITS
MAX_ALPHABET = 1 << 15

_LOG_SIGMA_MIN = math.log(SIGMA_MIN)
_LOG_SIGMA_MAX = math.log(SIGMA_MAX)
_INV_LN2 = 1.0 / math.log(2.0)


@dataclass
class GmmParams:
    """Mixture parameters; each field is (B, K, H, W)."""

    weights: object
    means: object
    scales: object


@dataclass(frozen=True)
class SymbolAlphabet:
    lo: int
    hi: int

    def __post_init__(self):
        if self.lo > self.hi:
            raise ShapeError("alphabet lower bound above upper bound", lo=self.lo, hi=self.hi)
        if not (-(1 << 15) <= self.lo and self.hi <= (1 << 15) - 1):
            raise ShapeError("alphabet bounds must fit signed 16 bits", lo=self.lo, hi=self.hi)

    @property
    def size(self):
        return self.hi - self.lo + 1


def activate_params(raw, mixtures: int = MIXTURES) -> GmmParams:
    """Split (B, 3K, H, W) raw outputs into weights, means and scales.

    Channel blocks: [0, K) weight logits, [K, 2K) means, [2K, 3K) log-scales.
    """
    if raw.ndim != 4 or raw.shape[1] != 3 * mixtures:
        raise ShapeError("raw entropy parameters need 3K channels",
                         shape=raw.shape, expected_channels=3 * mixtures)
    k = mixtures
    weights = ops.softmax(ops.take(raw, 1, 0, k), axis=1)
    means = ops.take(raw, 1, k, 2 * k)
    log_scales = ops.clamp(ops.take(raw, 1, 2 * k, 3 * k), _LOG_SIGMA_MIN, _LOG_SIGMA_MAX)
    return GmmParams(weights, means, ops.exp(log_scales))


def activate_numpy(raw, mixtures: int = MIXTURES):
    """Same as ``activate_params`` for a plain (3K,) vector, in float64."""
    raw = np.asarray(raw, dtype=np.float64)
    k = mixtures
    logits = raw[:k] - raw[:k].max()
    e = np.exp(logits)
    w = e / e.sum()
    sigma = np.exp(np.clip(raw[2 * k:3 * k], _LOG_SIGMA_MIN, _LOG_SIGMA_MAX))
    return w, raw[k:2 * k], sigma


def symbol_mass(weights, means, scales, symbols, floor: bool = True):
    """Mixture mass of integer ``symbols``; parameters carry K on axis 0.

    Broadcasting follows numpy: ``weights[k]`` etc. must broadcast against
    ``symbols``.
    """
    weights = np.asarray(weights, dtype=np.float64)
    comp, _, _ = ops.bin_masses(means, scales, symbols)
    mass = (weights * comp).sum(axis=0)
    return np.maximum(mass, PROB_FLOOR) if floor else mass


def rate_bits(params: GmmParams, symbols):
    """Per-position -log2 mass as a (B, 1, H, W) tensor."""
    mass = ops.gmm_mass(params.weights, params.means, params.scales, symbols, floor=PROB_FLOOR)
    return ops.scale(ops.log(mass), -_INV_LN2)


def subband_rate_bits(params: GmmParams, symbols):
    """Total bits for one subband plus the per-position breakdown (numpy)."""
    bits = rate_bits(params, symbols)
    return ops.total(bits), bits.data


def alphabet_masses(weights, means, scales, alphabet: SymbolAlphabet):
    """Floored masses of every symbol lo..hi for one position (float64)."""
    s = np.arange(alphabet.lo, alphabet.hi + 1, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)[:, None]
    mu = np.asarray(means, dtype=np.float64)[:, None]
    sg = np.asarray(scales, dtype=np.float64)[:, None]
    return symbol_mass(w, mu, sg, s[None, :])


def integer_cdf(masses, total: int = CDF_TOTAL):
    """Monotone integer CDF c[0..N] with c[0] = 0, c[N] = total, spans >= 1.

    Each symbol first gets one count; the remaining ``total - N`` counts are
    shared in proportion to the normalised masses by flooring, and whatever
    is left over goes one count at a time to the largest fractional
    remainders (lowest symbol first on ties).
    """
    masses = np.asarray(masses, dtype=np.float64)
    n = masses.size
    if n < 1 or n > MAX_ALPHABET:
        raise ShapeError("alphabet size out of range for the coder", size=n, limit=MAX_ALPHABET)
    share = masses / masses.sum() * (total - n)
    base = np.floor(share)
    counts = base.astype(np.int64) + 1
    remainder = total - int(counts.sum())
    if remainder > 0:
        frac = share - base
        order = np.lexsort((np.arange(n), -frac))
        counts[order[:remainder]] += 1
    while remainder < 0:
        # float roundoff overshoot; take counts back from the largest spans
        k = int(np.argmax(counts))
        counts[k] -= 1
        remainder += 1
    cdf = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=cdf[1:])
    return cdf


def coding_probabilities(masses):
    """The normalised floored masses the coder's table approximates."""
    masses = np.asarray(masses, dtype=np.float64)
    return masses / masses.sum()
