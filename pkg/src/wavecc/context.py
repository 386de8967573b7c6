"""Cross-component context model.

For every subband the entropy parameters come from a fusion network that
combines

* causal neighbours inside the subband (masked 3x3 convolutions), and
* a long-term context assembled from already coded data: a stacked
  convolutional-LSTM prediction driven by the previous subband, a learned
  x2 upsampling of the same-orientation subband one level coarser, and for
  chroma the co-located subbands of the components coded before it.

Luma has its own predictor and fusion networks; Cb and Cr share theirs.
Components are coded Y, then Cb, then Cr.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from wavecc.autodiff import Tensor, ops
from wavecc.autodiff.layers import conv_lstm_step, residual_block, uniform_init
from wavecc.errors import ShapeError, WaveccError
from wavecc.lifting import coding_order

ORIENTATION_CHANNEL = {"HL": 0, "LH": 1, "HH": 2, "LL": 0}
CROSS_COMPONENT_ROLES = frozenset({"y", "cb", "ypred"})
COMPONENT_KIND = {"Y": "y", "Cb": "cb", "Cr": "cr"}


class MissingContextError(WaveccError):
    """A context input was requested before the data it needs was coded."""


def context_roles(component: str, i: int):
    """Ordered roles of the long-term context channels for subband ``i``.

    y      co-located luma subband
    cb     co-located Cb subband (Cr only)
    ypred  luma predictor output after the first luma subband (Cb, i = 1)
    pred   this component's predictor output
    up     learned upsampling of this component's subband i - 3
    """
    if component == "Y":
        return () if i == 1 else (("pred",) if i <= 4 else ("pred", "up"))
    if component == "Cb":
        if i == 1:
            return ("y", "ypred")
        return ("y", "pred") if i <= 4 else ("y", "pred", "up")
    if component == "Cr":
        if i == 1:
            return ("y", "cb")
        return ("y", "cb", "pred") if i <= 4 else ("y", "cb", "pred", "up")
    raise ShapeError("unknown component", component=component)


def context_channels(component: str, i: int) -> int:
    return len(context_roles(component, i))


@dataclass
class ContextBundle:
    maps: Tensor | None
    roles: tuple
    component: str

    @property
    def channels(self):
        return 0 if self.maps is None else self.maps.shape[1]


# ---------------------------------------------------------------------------
# recurrent predictor
# ---------------------------------------------------------------------------

@dataclass
class RnnState:
    """Hidden and cell maps of each LSTM unit, in processing order."""

    h: tuple
    c: tuple

    @property
    def dims(self):
        return self.h[0].shape[2:]


def level_transition(state: RnnState) -> RnnState:
    """Nearest-neighbour x2 upsampling of every hidden and cell map."""
    return RnnState(tuple(ops.upsample2x(t) for t in state.h),
                    tuple(ops.upsample2x(t) for t in state.c))


def select_prediction(prediction, orientation: str):
    ch = ORIENTATION_CHANNEL[orientation]
    return ops.take(prediction, 1, ch, ch + 1)


class ContextPredictor:
    """Three stacked convolutional LSTM units.

    Units u1 and u2 carry 32 feature maps, u3 carries three, one per detail
    orientation; u3's hidden state is the prediction.  With the default
    ``stack_order='inside_out'`` the subband enters u3 and flows
    u3 -> u2 -> u1.  ``'outside_in'`` feeds u1 first so the prediction sees
    the two wide units.
    """

    def __init__(self, registry, prefix, channels=(32, 32, 3), stack_order="inside_out", rng=None):
        rng = rng or np.random.default_rng(0)
        if stack_order not in ("outside_in", "inside_out"):
            raise ShapeError("unknown stack order", stack_order=stack_order)
        hidden = dict(zip(("u1", "u2", "u3"), channels))
        self.order = ("u1", "u2", "u3") if stack_order == "outside_in" else ("u3", "u2", "u1")
        self.output_unit = self.order.index("u3")
        self.units = []
        cin = 1
        for name in self.order:
            ch = hidden[name]
            fan_in = (cin + ch) * 9
            weight = registry.add(f"{prefix}.{name}.weight",
                                  uniform_init(rng, (4 * ch, cin + ch, 3, 3), fan_in))
            bias = np.zeros(4 * ch, dtype=np.float32)
            bias[ch:2 * ch] = 1.0  # forget gate
            self.units.append((weight, registry.add(f"{prefix}.{name}.bias", bias)))
            cin = ch
        self.hidden = [hidden[name] for name in self.order]

    def zero_state(self, batch, height, width, dtype=np.float32):
        maps = tuple(Tensor(np.zeros((batch, ch, height, width), dtype=dtype)) for ch in self.hidden)
        return RnnState(maps, maps)

    def step(self, state: RnnState, subband, full=True):
        """Consume one subband map; returns (3-channel prediction, new state).

        With ``full=False`` units after the prediction unit in the stack are
        not evaluated (their state is carried over unchanged).  Nothing
        downstream of the prediction unit feeds any output, so coded values
        are the same either way.
        """
        if subband.shape[2:] != state.dims:
            raise ShapeError("subband and predictor state differ in size",
                             subband=subband.shape, state=state.dims)
        last = len(self.units) if full else self.output_unit + 1
        x = subband
        hs, cs = list(state.h), list(state.c)
        for k in range(last):
            weight, bias = self.units[k]
            x, (hs[k], cs[k]) = conv_lstm_step(x, (state.h[k], state.c[k]), weight, bias)
        new = RnnState(tuple(hs), tuple(cs))
        return new.h[self.output_unit], new

    def prediction(self, state: RnnState):
        return state.h[self.output_unit]


def chroma_state_init(snapshots: dict) -> RnnState:
    """Chroma predictor start state: the luma snapshot at the coarsest level."""
    if not snapshots:
        raise MissingContextError("no luma predictor snapshot available for chroma")
    return snapshots[max(snapshots)]


class Upsampler:
    """Nearest x2 followed by a 3x3 convolution initialised to identity."""

    def __init__(self, registry, prefix="ctx.up"):
        kernel = np.zeros((1, 1, 3, 3), dtype=np.float32)
        kernel[0, 0, 1, 1] = 1.0
        self.weight = registry.add(f"{prefix}.weight", kernel)
        self.bias = registry.add(f"{prefix}.bias", np.zeros(1))

    def __call__(self, x):
        return ops.conv2d(ops.upsample2x(x), self.weight, self.bias, padding="symmetric")


# ---------------------------------------------------------------------------
# context fusion
# ---------------------------------------------------------------------------

class FusionModule:
    """Entropy-parameter network for one subband index and component group.

    Lower path: conv(c -> W), residual block 1, residual block 2.  Upper
    path over the current subband: maskA(1 -> W) + block-1 output, tanh,
    maskB(W -> W) + block-2 output, tanh, 1x1 (W -> W), tanh, 1x1 (W -> 3K).
    The first lower convolution is per component kind because the number of
    context channels depends on the component; everything after it is shared.
    """

    def __init__(self, registry, prefix, inputs: dict, width=128, mixtures=3, rng=None):
        rng = rng or np.random.default_rng(0)
        self.prefix = prefix
        self.inputs = dict(inputs)
        self.width = width
        self.lower = {}
        for kind, ch in self.inputs.items():
            if ch == 0:
                continue
            name = "lower" if len(self.inputs) == 1 else f"lower_{kind}"
            self.lower[kind] = (
                registry.add(f"{prefix}.{name}.weight", uniform_init(rng, (width, ch, 3, 3), 9 * ch)),
                registry.add(f"{prefix}.{name}.bias", np.zeros(width)),
            )
        self.blocks = []
        if self.lower:
            for blk in ("res1", "res2"):
                self.blocks.append(tuple(
                    registry.add(f"{prefix}.{blk}{part}.{kind}", init)
                    for part in ("a", "b")
                    for kind, init in (("weight", uniform_init(rng, (width, width, 3, 3), 9 * width)),
                                       ("bias", np.zeros(width)))
                ))
        self.mask_a = (registry.add(f"{prefix}.mask_a.weight", uniform_init(rng, (width, 1, 3, 3), 4)),
                       registry.add(f"{prefix}.mask_a.bias", np.zeros(width)))
        self.mask_b = (registry.add(f"{prefix}.mask_b.weight",
                                    uniform_init(rng, (width, width, 3, 3), 5 * width)),
                       registry.add(f"{prefix}.mask_b.bias", np.zeros(width)))
        self.head1 = (registry.add(f"{prefix}.head1.weight", uniform_init(rng, (width, width, 1, 1), width)),
                      registry.add(f"{prefix}.head1.bias", np.zeros(width)))
        self.head2 = (registry.add(f"{prefix}.head2.weight",
                                   uniform_init(rng, (3 * mixtures, width, 1, 1), width)),
                      registry.add(f"{prefix}.head2.bias", np.zeros(3 * mixtures)))

    def lower_path(self, bundle: ContextBundle, kind: str):
        """(block-1 output, block-2 output), or (None, None) without context."""
        expected = self.inputs.get(kind)
        if expected is None:
            raise ShapeError("fusion module has no input for this component", kind=kind)
        if bundle.channels != expected:
            raise ShapeError("context channel count does not match the module",
                             module=self.prefix, kind=kind, expected=expected, found=bundle.channels)
        if expected == 0:
            return None, None
        weight, bias = self.lower[kind]
        x = ops.conv2d(bundle.maps, weight, bias, padding="symmetric")
        (wa, ba, wb, bb), (wc, bc, wd, bd) = self.blocks
        r1 = residual_block(x, wa, ba, wb, bb)
        r2 = residual_block(r1, wc, bc, wd, bd)
        return r1, r2

    def upper_path(self, current, r1, r2):
        a = ops.masked_conv2d(current, self.mask_a[0], self.mask_a[1], "A")
        if r1 is not None:
            a = ops.add(a, r1)
        h = ops.tanh(a)
        b = ops.masked_conv2d(h, self.mask_b[0], self.mask_b[1], "B")
        if r2 is not None:
            b = ops.add(b, r2)
        h = ops.tanh(b)
        h = ops.tanh(ops.conv2d(h, *self.head1))
        return ops.conv2d(h, *self.head2)

    def __call__(self, current, bundle: ContextBundle, kind: str):
        r1, r2 = self.lower_path(bundle, kind)
        return self.upper_path(current, r1, r2)


class IncrementalFusion:
    """Position-by-position evaluation of a fusion module's upper path.

    Used identically by encoder and decoder so both see bit-identical
    parameters.  Call ``begin_row(r)`` before each row, ``raw(r, c)`` for the
    parameters at (r, c), then ``push(r, c, value)`` with the coded value
    (already scaled) before moving on.
    """

    def __init__(self, module: FusionModule, r1, r2, height, width):
        f32 = np.float32
        wa, ba = (t.data.astype(f32) for t in module.mask_a)
        wb, bb = (t.data.astype(f32) for t in module.mask_b)
        self.a_taps = [wa[:, 0, 0, 0], wa[:, 0, 0, 1], wa[:, 0, 0, 2]]
        self.a_left = wa[:, 0, 1, 0]
        self.b_taps = [np.ascontiguousarray(wb[:, :, 0, k]) for k in range(3)]
        self.b_left = np.ascontiguousarray(wb[:, :, 1, 0])
        self.b_centre = np.ascontiguousarray(wb[:, :, 1, 1])
        self.ba, self.bb = ba, bb
        self.h1w = np.ascontiguousarray(module.head1[0].data[:, :, 0, 0].astype(f32))
        self.h1b = module.head1[1].data.astype(f32)
        self.h2w = np.ascontiguousarray(module.head2[0].data[:, :, 0, 0].astype(f32))
        self.h2b = module.head2[1].data.astype(f32)
        self.r1 = None if r1 is None else np.ascontiguousarray(r1.data[0].astype(f32))
        self.r2 = None if r2 is None else np.ascontiguousarray(r2.data[0].astype(f32))
        self.width = width
        n = module.width
        self.x = np.zeros((height + 1, width + 2), dtype=f32)
        self.h1 = np.zeros((height + 1, width + 2, n), dtype=f32)
        self._prev_a = None
        self._prev_b = None

    def begin_row(self, r):
        w = self.width
        xr = self.x[r]
        self._prev_a = (self.a_taps[0][None, :] * xr[0:w, None]
                        + self.a_taps[1][None, :] * xr[1:w + 1, None]
                        + self.a_taps[2][None, :] * xr[2:w + 2, None])
        hr = self.h1[r]
        self._prev_b = (hr[0:w] @ self.b_taps[0].T + hr[1:w + 1] @ self.b_taps[1].T
                        + hr[2:w + 2] @ self.b_taps[2].T)

    def raw(self, r, c):
        a = self._prev_a[c] + self.a_left * self.x[r + 1, c] + self.ba
        if self.r1 is not None:
            a = a + self.r1[:, r, c]
        h1 = np.tanh(a)
        self.h1[r + 1, c + 1] = h1
        b = self._prev_b[c] + self.b_left @ self.h1[r + 1, c] + self.b_centre @ h1 + self.bb
        if self.r2 is not None:
            b = b + self.r2[:, r, c]
        h = np.tanh(b)
        h = np.tanh(self.h1w @ h + self.h1b)
        return self.h2w @ h + self.h2b

    def push(self, r, c, value):
        self.x[r + 1, c + 1] = value


# ---------------------------------------------------------------------------
# whole context model
# ---------------------------------------------------------------------------

class ContextModel:
    def __init__(self, registry, levels=4, fusion_width=128, rnn_channels=(32, 32, 3), mixtures=3,
                 input_scale=1.0 / 16, stack_order="inside_out", rng=None):
        rng = rng or np.random.default_rng(0)
        self.levels = levels
        self.order = coding_order(levels)
        self.input_scale = input_scale
        self.rnn = {g: ContextPredictor(registry, f"ctx.{g}.rnn", rnn_channels, stack_order, rng)
                    for g in ("y", "c")}
        self.up = Upsampler(registry, "ctx.up")
        n = len(self.order)
        self.fuse = {
            "y": [FusionModule(registry, f"ctx.y.fuse.i{i:02d}", {"y": context_channels("Y", i)},
                               fusion_width, mixtures, rng) for i in range(1, n + 1)],
            "c": [FusionModule(registry, f"ctx.c.fuse.i{i:02d}",
                               {"cb": context_channels("Cb", i), "cr": context_channels("Cr", i)},
                               fusion_width, mixtures, rng) for i in range(1, n + 1)],
        }

    def level_of(self, i):
        return self.order[i - 1][0]

    def orientation_of(self, i):
        return self.order[i - 1][1]


@dataclass
class CodingMemory:
    """Everything coded so far for one image (or batch), as scaled maps."""

    subbands: dict = field(default_factory=lambda: {"Y": {}, "Cb": {}, "Cr": {}})
    y_predictions: dict = field(default_factory=dict)
    y_snapshots: dict = field(default_factory=dict)


class ComponentPass:
    """Walks one component's subbands in coding order.

    ``chroma_modules=False`` codes a chroma component exactly like luma
    (luma networks, no cross-component inputs).  ``cross_component=False``
    keeps the chroma networks but feeds zeros in place of every channel
    derived from another component.  ``full_state`` evaluates every
    predictor unit even when it cannot affect the prediction.
    """

    def __init__(self, model: ContextModel, component: str, memory: CodingMemory,
                 chroma_modules=True, cross_component=True, full_state=False):
        self.model = model
        self.component = component
        self.memory = memory
        self.layout = component if (component == "Y" or chroma_modules) else "Y"
        self.group = "y" if self.layout == "Y" else "c"
        self.kind = COMPONENT_KIND[self.layout]
        self.cross_component = cross_component
        self.full_state = full_state
        self.rnn = model.rnn[self.group]
        self.state = None
        self.pred = None
        self.next_index = 1

    def module(self, i) -> FusionModule:
        return self.model.fuse[self.group][i - 1]

    def _coded(self, component, i):
        try:
            return self.memory.subbands[component][i]
        except KeyError:
            raise MissingContextError("context needs a subband that is not coded yet",
                                      component=component, subband=i) from None

    def _advance(self, i):
        if i == 1:
            return
        prev = self._coded(self.component, i - 1)
        if self.state is None:
            if self.group == "c":
                self.state = chroma_state_init(self.memory.y_snapshots)
            else:
                b, _, h, w = prev.shape
                self.state = self.rnn.zero_state(b, h, w, prev.data.dtype)
        _, self.state = self.rnn.step(self.state, prev, self.full_state)
        if self.model.level_of(i) != self.model.level_of(i - 1):
            if self.component == "Y":
                self.memory.y_snapshots[self.model.level_of(i - 1)] = self.state
            self.state = level_transition(self.state)
        self.pred = self.rnn.prediction(self.state)
        if self.component == "Y":
            self.memory.y_predictions[i] = self.pred

    def bundle(self, i) -> ContextBundle:
        if i != self.next_index:
            raise MissingContextError("subbands must be visited in coding order",
                                      expected=self.next_index, requested=i)
        self._advance(i)
        orient = self.model.orientation_of(i)
        maps = []
        roles = context_roles(self.layout, i)
        for role in roles:
            if role == "y":
                t = self._coded("Y", i)
            elif role == "cb":
                t = self._coded("Cb", i)
            elif role == "ypred":
                if 2 not in self.memory.y_predictions:
                    raise MissingContextError("luma prediction cache is empty")
                t = select_prediction(self.memory.y_predictions[2], orient)
            elif role == "pred":
                t = select_prediction(self.pred, orient)
            else:
                t = self.model.up(self._coded(self.component, i - 3))
            if role in CROSS_COMPONENT_ROLES and not self.cross_component:
                t = Tensor(np.zeros(t.shape, dtype=t.data.dtype))
            maps.append(t)
        stacked = None if not maps else (maps[0] if len(maps) == 1 else ops.concat(maps, axis=1))
        return ContextBundle(stacked, roles, self.component)

    def record(self, i, symbols):
        """Store coded subband ``i`` (symbol values as a (B,1,h,w) tensor)."""
        self.memory.subbands[self.component][i] = ops.scale(symbols, self.model.input_scale)
        self.next_index = i + 1

    def finish(self):
        """Consume the final subband so luma leaves a finest-level snapshot."""
        last = len(self.model.order)
        prev = self._coded(self.component, last)
        if self.state is None:
            b, _, h, w = prev.shape
            self.state = self.rnn.zero_state(b, h, w, prev.data.dtype)
        _, state = self.rnn.step(self.state, prev, self.full_state)
        if self.component == "Y":
            self.memory.y_snapshots[self.model.level_of(last)] = state


# ---------------------------------------------------------------------------
# luma -> chroma initialisation
# ---------------------------------------------------------------------------

def luma_to_chroma_remap(levels: int):
    """Source -> destination names for same-shaped luma/chroma tensors."""
    from wavecc.autodiff import ParamRegistry

    probe = ParamRegistry()
    ContextModel(probe, levels=levels, fusion_width=1, rnn_channels=(1, 1, 3), mixtures=1)
    remap = {}
    for name in probe:
        if not name.startswith("ctx.y."):
            continue
        dest = "ctx.c." + name[len("ctx.y."):]
        if ".lower." in dest:
            continue
        if dest in probe and probe[dest].shape == probe[name].shape:
            remap[name] = dest
    return remap


def init_chroma_from_luma(registry, levels: int):
    """Copy luma predictor/fusion weights into the chroma slots.

    Shared layers copy directly.  The per-component first lower
    convolutions copy the input channels whose role exists in the luma
    layout ('pred', 'up') and start every other channel at zero.
    """
    for src, dst in luma_to_chroma_remap(levels).items():
        if src in registry and dst in registry and registry[src].shape == registry[dst].shape:
            registry[dst].data = registry[src].data.copy()
    for i in range(1, 3 * levels + 2):
        y_roles = context_roles("Y", i)
        y_weight = f"ctx.y.fuse.i{i:02d}.lower.weight"
        for comp, kind in (("Cb", "cb"), ("Cr", "cr")):
            w_name = f"ctx.c.fuse.i{i:02d}.lower_{kind}.weight"
            b_name = f"ctx.c.fuse.i{i:02d}.lower_{kind}.bias"
            if w_name not in registry:
                continue
            weight = np.zeros_like(registry[w_name].data)
            bias = np.zeros_like(registry[b_name].data)
            if y_weight in registry:
                src = registry[y_weight].data
                for j, role in enumerate(context_roles(comp, i)):
                    if role in y_roles:
                        weight[:, j] = src[:, y_roles.index(role)]
                bias = registry[f"ctx.y.fuse.i{i:02d}.lower.bias"].data.copy()
            registry[w_name].data = weight
            registry[b_name].data = bias
