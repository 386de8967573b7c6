"""Rate-distortion objective and the two training stages.

Stage 1 trains everything that luma coding touches (lifting filters, the
quantizer step, the refinement net, luma predictor/fusion modules and the
upsampler) on Y planes.  Stage 2 freezes all of that, copies the luma
context weights into the chroma slots and trains only ``ctx.c.*`` on the
mean of the Cb and Cr losses.

The rate term is bits per pixel of the batch so one lambda means the same
operating point at every crop size.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import logging
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from wavecc.autodiff import AdamW, Tensor, cosine_lr, no_grad, ops
from wavecc.context import CodingMemory, ComponentPass, init_chroma_from_luma
from wavecc.errors import NumericError, ShapeError
from wavecc.gmm import activate_params, subband_rate_bits
from wavecc.lifting import dequantize_tensor, quantize_ste
from wavecc.model import LEVEL_SHIFT, WaveccModel

log = logging.getLogger(__name__)

STAGE1_PREFIXES = ("lifting.", "quant.", "dequant.", "ctx.y.", "ctx.up.")
STAGE2_PREFIXES = ("ctx.c.",)
LOG_COLUMNS = ("step", "lr", "loss", "rate_bpp", "mse")


@dataclass
class LossReport:
    loss: Tensor
    rate_bits: Tensor
    distortion: Tensor
    lam: float
    pixels: int
    subband_bits: list = field(default_factory=list)

    @property
    def rate_bpp(self):
        return float(self.rate_bits.data.sum()) / self.pixels

    @property
    def mse(self):
        return float(self.distortion.data.sum())

    @property
    def value(self):
        return float(self.loss.data.sum())


@dataclass
class TrainConfig:
    lam: float = 0.01
    batch_size: int = 16
    crop: int = 64
    steps: int = 300
    lr0: float = 1e-4
    lr_min: float = 1e-6
    weight_decay: float = 0.0
    stage: int = 1
    seed: int = 0


@dataclass
class ComponentOutput:
    bits: Tensor
    subband_bits: list
    symbols: list
    reconstruction: Tensor | None


def component_graph(model: WaveccModel, planes, cpass: ComponentPass, quant_mode="round",
                    reconstruct=True, transform_grad=True) -> ComponentOutput:
    """Differentiable rate (and optionally reconstruction) for one component.

    ``planes`` is (B, 1, H, W) in pixel units.  With ``transform_grad``
    False the analysis and quantization run without recording a graph.
    """
    x = planes if isinstance(planes, Tensor) else Tensor(np.asarray(planes, dtype=np.float32))
    x = ops.sub(x, LEVEL_SHIFT)
    ctx = model.context
    grad_ctx = contextlib.nullcontext() if transform_grad else no_grad()
    with grad_ctx:
        symbols = [quantize_ste(y, model.delta, quant_mode) for y in model.transform.forward(x)]
    total = None
    per_subband = []
    for i, q in enumerate(symbols, 1):
        bundle = cpass.bundle(i)
        raw = cpass.module(i)(ops.scale(q, ctx.input_scale), bundle, cpass.kind)
        bits, _ = subband_rate_bits(activate_params(raw, model.config.mixtures), q)
        cpass.record(i, q)
        per_subband.append(float(bits.data.sum()))
        total = bits if total is None else ops.add(total, bits)
    rec = None
    if reconstruct:
        with grad_ctx:
            rec = model.transform.inverse([dequantize_tensor(q, model.delta) for q in symbols])
            rec = ops.add(model.dequant(rec), LEVEL_SHIFT)
    return ComponentOutput(total, per_subband, symbols, rec)


def _report(bits, mse, lam, pixels, subband_bits):
    rate = ops.scale(bits, 1.0 / pixels)
    loss = ops.add(rate, ops.scale(mse, lam))
    if not np.all(np.isfinite(loss.data)):
        raise NumericError("non-finite loss", rate_bits=float(bits.data.sum()),
                           mse=float(mse.data.sum()), lam=lam)
    return LossReport(loss, bits, mse, lam, pixels, subband_bits)


def rd_loss(model: WaveccModel, planes, lam, quant_mode="round") -> LossReport:
    """Luma-style loss on (B, 1, H, W) planes: bits/pixel + lam * MSE."""
    planes = np.asarray(planes)
    if planes.ndim != 4 or planes.shape[1] != 1:
        raise ShapeError("rd_loss expects (B, 1, H, W) planes", shape=planes.shape)
    cpass = ComponentPass(model.context, "Y", CodingMemory())
    target = Tensor(planes.astype(np.float32))
    out = component_graph(model, target, cpass, quant_mode)
    mse = ops.mean(ops.square(ops.sub(out.reconstruction, target)))
    b, _, h, w = planes.shape
    return _report(out.bits, mse, lam, b * h * w, out.subband_bits)


def chroma_loss(model: WaveccModel, planes, lam, cross_component=True, chroma_modules=True):
    """Mean of the Cb and Cr losses on (B, 3, H, W) YCbCr batches.

    The luma pass only supplies context and predictor snapshots, so it runs
    without a graph.  Distortion does not depend on the chroma context
    weights and is added as a constant.
    """
    planes = np.asarray(planes, dtype=np.float32)
    if planes.ndim != 4 or planes.shape[1] != 3:
        raise ShapeError("chroma_loss expects (B, 3, H, W) planes", shape=planes.shape)
    memory = CodingMemory()
    b, _, h, w = planes.shape
    with no_grad():
        ypass = ComponentPass(model.context, "Y", memory)
        component_graph(model, planes[:, 0:1], ypass, reconstruct=False)
        if model.levels == 1:
            ypass.finish()
    reports = []
    for k, comp in ((1, "Cb"), (2, "Cr")):
        cpass = ComponentPass(model.context, comp, memory, chroma_modules, cross_component)
        out = component_graph(model, planes[:, k:k + 1], cpass, reconstruct=False,
                              transform_grad=False)
        with no_grad():
            target = Tensor(planes[:, k:k + 1])
            rec = model.transform.inverse([dequantize_tensor(q, model.delta) for q in out.symbols])
            rec = ops.add(model.dequant(rec), LEVEL_SHIFT)
            mse = ops.mean(ops.square(ops.sub(rec, target)))
        reports.append(_report(out.bits, mse, lam, b * h * w, out.subband_bits))
    cb, cr = reports
    return LossReport(ops.scale(ops.add(cb.loss, cr.loss), 0.5), ops.add(cb.rate_bits, cr.rate_bits),
                      ops.scale(ops.add(cb.distortion, cr.distortion), 0.5), lam, 2 * b * h * w,
                      cb.subband_bits + cr.subband_bits)


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

@contextlib.contextmanager
def frozen(registry, trainable_prefixes):
    """Disable gradients for every tensor outside ``trainable_prefixes``."""
    saved = {n: t.requires_grad for n, t in registry.items()}
    try:
        for n, t in registry.items():
            t.requires_grad = n.startswith(tuple(trainable_prefixes))
        yield
    finally:
        for n, t in registry.items():
            t.requires_grad = saved[n]


def tensor_fingerprint(registry, prefixes):
    h = hashlib.sha256()
    for name, t in registry.subset(prefixes):
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return h.hexdigest()


def _atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def save_checkpoint(model: WaveccModel, path, meta: dict):
    model.save(path)
    sidecar = {**meta, "config": model.config.as_dict(), "digest": f"{model.digest():016x}"}
    _atomic_write_text(str(path) + ".json", json.dumps(sidecar, indent=2, sort_keys=True))


def _run(model, batches, config, trainable, loss_fn, log_path, checkpoint, callback):
    params = model.registry.subset(trainable)
    opt = AdamW(params, weight_decay=config.weight_decay)
    history = []
    writer = None
    fh = open(log_path, "w", newline="") if log_path else None
    try:
        if fh:
            writer = csv.writer(fh)
            writer.writerow(LOG_COLUMNS)
        with frozen(model.registry, trainable):
            for step in range(1, config.steps + 1):
                lr = cosine_lr(step - 1, config.steps, config.lr0, config.lr_min)
                report = loss_fn(next(batches))
                opt.zero_grad()
                report.loss.backward()
                opt.step(lr)
                row = (step, lr, report.value, report.rate_bpp, report.mse)
                history.append(row)
                if writer:
                    writer.writerow(row)
                    fh.flush()
                if callback:
                    callback(row)
    finally:
        if fh:
            fh.close()
    if checkpoint:
        save_checkpoint(model, checkpoint, {"stage": config.stage, "lambda": config.lam,
                                            "steps": config.steps, "seed": config.seed})
    return history


def train_stage1(model: WaveccModel, batches, config: TrainConfig, log_path=None, checkpoint=None,
                 callback=None):
    """Train luma-path parameters; returns the per-step history rows."""
    return _run(model, batches, config, STAGE1_PREFIXES,
                lambda batch: rd_loss(model, batch[:, 0:1], config.lam),
                log_path, checkpoint, callback)


def train_stage2(model: WaveccModel, batches, config: TrainConfig, log_path=None, checkpoint=None,
                 callback=None, init_from_luma=True):
    """Train only the chroma context modules on YCbCr batches.

    Raises NumericError if any frozen tensor changed, which would mean the
    stage-1 model embedded in the bitstream digest is no longer the one
    that was trained.
    """
    if init_from_luma:
        init_chroma_from_luma(model.registry, model.levels)
    frozen_names = [n for n in model.registry if not n.startswith(STAGE2_PREFIXES)]
    before = tensor_fingerprint(model.registry, frozen_names)
    history = _run(model, batches, config, STAGE2_PREFIXES,
                   lambda batch: chroma_loss(model, batch, config.lam),
                   log_path, None, callback)
    if tensor_fingerprint(model.registry, frozen_names) != before:
        raise NumericError("stage 2 modified a frozen tensor")
    if checkpoint:
        save_checkpoint(model, checkpoint, {"stage": 2, "lambda": config.lam,
                                            "steps": config.steps, "seed": config.seed})
    return history


def read_log(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in rows]


def timed(fn, *args, **kwargs):
    t = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t
