import numpy as np
import pytest

from wavecc.autodiff import ParamRegistry
from wavecc.lifting import LiftingTransform
from wavecc.model import ModelConfig, WaveccModel

# narrow networks keep the per-symbol coding loop fast in unit tests
SMALL = ModelConfig(fusion_width=8, lifting_width=4, dequant_width=4, dequant_blocks=1)


def small_model(seed=0, randomize=True):
    model = WaveccModel(SMALL, seed=seed)
    return model.randomize(seed) if randomize else model


def random_transform(seed, levels=4, width=16, gain=0.5, skip_noise=0.0, registry=None):
    """Lifting transform with random residual nets and gains.

    Skip taps stay at the 9/7 values plus optional uniform noise.
    """
    rng = np.random.default_rng(seed)
    t = LiftingTransform(ParamRegistry() if registry is None else registry, levels, width, rng)
    for net in t.filters.values():
        net.skip.data[...] += rng.uniform(-skip_noise, skip_noise, 3)
        net.gain.data[...] = rng.uniform(-gain, gain, 1)
    return t


def random_rgb(rng, h=32, w=32):
    from wavecc.pixelio import RgbImage
    return RgbImage(rng.integers(0, 256, (h, w, 3)).astype(np.uint8))


@pytest.fixture
def gen():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
