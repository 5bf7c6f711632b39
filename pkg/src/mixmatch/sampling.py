"""Mix step: cross-image patch sampling with overlap rejection."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .data import Patch, Rect, as_seed, derive_rng

MAX_ATTEMPTS_FACTOR = 10


class EmptyBatchError(RuntimeError):
    """No patch could be accepted from any image of a batch."""


@dataclass(frozen=True, eq=False)
class SampleBatch:
    patches: list
    per_image_counts: list

    def __len__(self):
        return len(self.patches)

    @property
    def labels(self) -> np.ndarray:
        return np.array([p.label for p in self.patches], dtype=np.int64)

    def pixel_matrix(self) -> np.ndarray:
        """Patches flattened row-wise into an ``(n, S*S*C)`` matrix."""
        return np.stack([p.pixels.reshape(-1) for p in self.patches])


def rect_iou(a: Rect, b: Rect) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def central_label(image, r: Rect) -> int:
    return int(image.labels[r.y + r.h // 2, r.x + r.w // 2])


@lru_cache(maxsize=512)
def _interp_matrix(n_in: int, size: int) -> np.ndarray:
    # rows are output samples, half-pixel aligned and clamped at the border
    pos = np.clip((np.arange(size) + 0.5) * (n_in / size) - 0.5, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((size, n_in))
    np.add.at(m, (np.arange(size), lo), 1.0 - frac)
    np.add.at(m, (np.arange(size), hi), frac)
    m.setflags(write=False)
    return m


def resize_bilinear(pixels: np.ndarray, size: int) -> np.ndarray:
    """Resize an ``(h, w, C)`` block to ``(size, size, C)`` bilinearly."""
    h, w = pixels.shape[:2]
    if h == size and w == size:
        return np.array(pixels, dtype=np.float64)
    rows = _interp_matrix(h, size)
    cols = _interp_matrix(w, size)
    across = np.matmul(cols, pixels)  # (h, size, C)
    return (rows @ across.reshape(h, -1)).reshape(size, size, pixels.shape[2])


def _sample_image(image, image_index, cfg, rng) -> list:
    H, W = image.height, image.width
    short = min(H, W)
    lo, hi = cfg.patch_scale_range
    side_lo = max(1, int(round(lo * short)))
    side_hi = max(side_lo, min(short, int(round(hi * short))))
    accepted: list[Patch] = []
    for _ in range(MAX_ATTEMPTS_FACTOR * cfg.patches_per_image):
        if len(accepted) == cfg.patches_per_image:
            break
        side = int(rng.integers(side_lo, side_hi + 1))
        rect = Rect(int(rng.integers(0, W - side + 1)), int(rng.integers(0, H - side + 1)),
                    side, side)
        label = central_label(image, rect)
        if label == image.ignore_label:
            continue
        if any(rect_iou(rect, p.rect) > cfg.overlap_iou_max for p in accepted):
            continue
        block = image.pixels[rect.y:rect.y + rect.h, rect.x:rect.x + rect.w]
        accepted.append(Patch(resize_bilinear(block, cfg.patch_resize), label,
                              image_index, rect))
    return accepted


def sample_patches(images, cfg, rng, image_indices=None) -> SampleBatch:
    """Sample up to ``cfg.patches_per_image`` patches from every image.

    ``rng`` may be a seed or a Generator; each image gets its own sub-stream
    derived from it and its position in ``images``, so the result does not
    depend on the order in which images are processed. ``image_indices``
    records dataset provenance when ``images`` is a drawn subset.
    """
    base = as_seed(rng)
    if image_indices is None:
        image_indices = range(len(images))
    patches, counts = [], []
    for pos, (image, idx) in enumerate(zip(images, image_indices)):
        got = _sample_image(image, int(idx), cfg, derive_rng(base, pos))
        patches.extend(got)
        counts.append(len(got))
    if not patches:
        raise EmptyBatchError("no patch accepted from any image in the batch")
    return SampleBatch(patches, counts)
