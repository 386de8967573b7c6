"""Training data: image folders, seeded crops and synthetic corpora."""

from __future__ import annotations

import logging
import os

import numpy as np
from scipy.ndimage import gaussian_filter

from wavecc.errors import DataError, WaveccError
from wavecc.pixelio import Plane, RgbImage, load_image, rgb_to_ycbcr, ycbcr_to_rgb

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".ppm")


def load_folder(path):
    """Every readable PNG/PPM in ``path`` (sorted by name); unreadable files are skipped."""
    try:
        names = sorted(n for n in os.listdir(path) if n.lower().endswith(IMAGE_SUFFIXES))
    except OSError as exc:
        raise DataError("cannot list dataset directory", path=str(path), reason=exc.strerror) from None
    images = []
    for name in names:
        try:
            images.append(load_image(os.path.join(path, name)))
        except WaveccError as exc:
            log.warning("skipping %s: %s", name, exc)
    if not images:
        raise DataError("dataset holds no readable images", path=str(path))
    return images


def ycbcr_stack(image: RgbImage) -> np.ndarray:
    """(3, H, W) float64 Y, Cb, Cr planes."""
    return np.stack([p.values for p in rgb_to_ycbcr(image)])


def _fit_crop(planes, crop):
    """Reflect planes up to at least crop x crop."""
    _, h, w = planes.shape
    ph, pw = max(0, crop - h), max(0, crop - w)
    if ph or pw:
        mode = "reflect" if min(h, w) >= 2 and ph < h and pw < w else "symmetric"
        planes = np.pad(planes, ((0, 0), (0, ph), (0, pw)), mode=mode)
    return planes


def make_batches(source, crop=64, batch_size=16, seed=0, components="Y"):
    """Endless deterministic stream of (B, C, crop, crop) float64 batches.

    ``source`` is a directory or a list of RgbImage.  Images are visited in
    a fresh seeded permutation per epoch; crop offsets are drawn from the
    same generator.  ``components`` is "Y" (C = 1) or "YCbCr" (C = 3).
    """
    images = load_folder(source) if isinstance(source, (str, os.PathLike)) else list(source)
    if not images:
        raise DataError("dataset is empty")
    if components not in ("Y", "YCbCr"):
        raise DataError("components must be 'Y' or 'YCbCr'", components=components)
    planes = [_fit_crop(ycbcr_stack(img), crop) for img in images]
    keep = 1 if components == "Y" else 3
    rng = np.random.default_rng(seed)
    queue = []
    while True:
        batch = []
        for _ in range(batch_size):
            if not queue:
                queue = list(rng.permutation(len(planes)))
            p = planes[queue.pop(0)]
            top = int(rng.integers(0, p.shape[1] - crop + 1))
            left = int(rng.integers(0, p.shape[2] - crop + 1))
            batch.append(p[:keep, top:top + crop, left:left + crop])
        yield np.stack(batch)


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------

def synthetic_luma(rng, height=64, width=64):
    """Piecewise-smooth test content: shaded background, blobs, edges, grain."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    gx, gy = rng.uniform(-1.5, 1.5, size=2)
    img = 128 + gx * (xx - width / 2) + gy * (yy - height / 2)
    img += gaussian_filter(rng.normal(0, 1, (height, width)), rng.uniform(2, 6)) * rng.uniform(40, 120)
    for _ in range(int(rng.integers(2, 6))):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        if rng.random() < 0.5:
            r = rng.uniform(4, max(5, min(height, width) / 3))
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        else:
            hh, ww = rng.uniform(4, height / 2), rng.uniform(4, width / 2)
            mask = (np.abs(yy - cy) < hh / 2) & (np.abs(xx - cx) < ww / 2)
        img = np.where(mask, img + rng.uniform(-70, 70), img)
    img += rng.normal(0, 2.0, img.shape)
    return np.clip(img, 0, 255)


def synthetic_gray_image(rng, height=64, width=64) -> RgbImage:
    y = np.floor(synthetic_luma(rng, height, width) + 0.5).astype(np.uint8)
    return RgbImage(np.repeat(y[:, :, None], 3, axis=2))


def correlated_chroma_image(rng, height=64, width=64, cb_gain=0.5, cr_gain=-0.3,
                            noise=2.0) -> RgbImage:
    """Chroma planes linear in luma: C - 128 = gain * (Y - 128) + noise."""
    y = synthetic_luma(rng, height, width)
    cb = 128 + cb_gain * (y - 128) + rng.normal(0, noise, y.shape)
    cr = 128 + cr_gain * (y - 128) + rng.normal(0, noise, y.shape)
    rgb = ycbcr_to_rgb(Plane(y, "Y"), Plane(cb, "Cb"), Plane(cr, "Cr"))
    return rgb.to_uint8()


def synthetic_corpus(kind, count, seed, height=64, width=64):
    """``kind`` is 'gray' or 'correlated'."""
    rng = np.random.default_rng(seed)
    make = {"gray": synthetic_gray_image, "correlated": correlated_chroma_image}[kind]
    return [make(rng, height, width) for _ in range(count)]
