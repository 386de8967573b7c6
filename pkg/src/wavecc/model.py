"""Complete codec model: transform, quantizer, context model, refinement net.

All trainable tensors live in one ``ParamRegistry``; its serialized form is
the weights container and its digest goes into every bitstream.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from wavecc.autodiff import ParamRegistry
from wavecc.autodiff import registry as container
from wavecc.codec.dequant import DequantNet
from wavecc.context import ContextModel
from wavecc.errors import FormatError
from wavecc.lifting import LEVEL_SHIFT, LiftingTransform



@dataclass(frozen=True)
class ModelConfig:
    levels: int = 4
    mixtures: int = 3
    lifting_width: int = 16
    fusion_width: int = 128
    rnn_channels: tuple = (32, 32, 3)
    dequant_width: int = 32
    dequant_blocks: int = 6
    delta_init: float = 1.0
    input_scale: float = 1.0 / 16
    stack_order: str = "inside_out"

    @classmethod
    def desk(cls, **overrides):
        """Smaller fusion width for CPU training runs."""
        return cls(**{"fusion_width": 32, **overrides})

    def as_dict(self):
        return asdict(self)


class WaveccModel:
    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.registry = ParamRegistry()
        self.transform = LiftingTransform(self.registry, config.levels, config.lifting_width, rng)
        self.delta = self.registry.add("quant.delta", np.full(1, config.delta_init))
        self.dequant = DequantNet(self.registry, "dequant", config.dequant_width,
                                  config.dequant_blocks, rng)
        self.context = ContextModel(self.registry, config.levels, config.fusion_width,
                                    config.rnn_channels, config.mixtures, config.input_scale,
                                    config.stack_order, rng)

    @property
    def levels(self):
        return self.config.levels

    def delta_value(self) -> float:
        return float(self.delta.data[0])

    def digest(self) -> int:
        return self.registry.digest()

    def save(self, path):
        container.save(self.registry, path)

    @classmethod
    def load(cls, path, config: ModelConfig | None = None):
        with open(path, "rb") as fh:
            arrays = container.parse(fh.read())
        model = cls(config or infer_config(arrays))
        container.assign(model.registry, arrays)
        return model

    def randomize(self, seed: int, gain: float = 0.3):
        """Random lifting residual gains and non-zero refinement tail (for tests)."""
        rng = np.random.default_rng(seed)
        for net in self.transform.filters.values():
            net.gain.data[...] = rng.uniform(-gain, gain, size=1)
        for t in self.dequant.tail:
            t.data[...] = rng.uniform(-1e-3, 1e-3, size=t.shape)
        return self


def infer_config(arrays) -> ModelConfig:
    """Recover widths from tensor shapes in a parsed weights container."""
    try:
        fusion_width = arrays["ctx.y.fuse.i01.mask_a.weight"].shape[0]
        mixtures = arrays["ctx.y.fuse.i01.head2.weight"].shape[0] // 3
        lifting_width = arrays["lifting.p1.res0.weight"].shape[0]
        dequant_width = arrays["dequant.head.weight"].shape[0]
        blocks = len({n.split(".")[1] for n in arrays if n.startswith("dequant.block")})
        count = len({n.split(".")[3] for n in arrays if n.startswith("ctx.y.fuse.")})
        u3_in = arrays["ctx.y.rnn.u3.weight"].shape[1]
        u1_in = arrays["ctx.y.rnn.u1.weight"].shape[1]
        hidden = tuple(arrays[f"ctx.y.rnn.{u}.weight"].shape[0] // 4 for u in ("u1", "u2", "u3"))
    except KeyError as exc:
        raise FormatError("weights container is missing a required tensor", name=str(exc)) from None
    if (count - 1) % 3:
        raise FormatError("fusion module count does not match any level count", count=count)
    # u3 reads one channel plus its own state when it takes the subband directly
    stack = "inside_out" if u3_in == 1 + hidden[2] else "outside_in"
    if stack == "outside_in" and u1_in != 1 + hidden[0]:
        raise FormatError("cannot determine predictor stack order")
    return ModelConfig(levels=(count - 1) // 3, mixtures=mixtures, lifting_width=lifting_width,
                       fusion_width=fusion_width, rnn_channels=hidden, dequant_width=dequant_width,
                       dequant_blocks=blocks, stack_order=stack)
