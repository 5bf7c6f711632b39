"""Domain types, PPM/PGM dataset I/O, synthetic scenes and seed plumbing."""
from __future__ import annotations

import colorsys
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IGNORE_LABEL = 255

# spawn-key tags so each consumer of a run seed draws from its own stream
STREAM_INIT = 0
STREAM_TRAIN = 1
STREAM_EVAL = 2
STREAM_SYNTH = 3


class DatasetError(ValueError):
    """Raised for malformed, missing or inconsistent dataset files."""


def derive_rng(seed, *keys) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``.

    Streams with different keys never overlap, so modules can draw from the
    same run seed without perturbing each other.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(ss)


def as_seed(rng) -> int:
    """Accept an int seed or a Generator and return an int base seed."""
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63 - 1))
    if rng is None:
        raise TypeError("a seed or numpy Generator is required")
    return int(rng)


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0 or self.w < 1 or self.h < 1:
            raise ValueError(f"invalid rect {self}")

    def fits(self, height: int, width: int) -> bool:
        return self.x + self.w <= width and self.y + self.h <= height

    @property
    def area(self) -> int:
        return self.w * self.h


@dataclass(frozen=True, eq=False)
class LabeledImage:
    pixels: np.ndarray  # (H, W, C) float in [0, 1]
    labels: np.ndarray  # (H, W) int, IGNORE_LABEL marks unsupervised pixels
    ignore_label: int = IGNORE_LABEL

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim == 2:
            pixels = pixels[:, :, None]
        labels = np.asarray(self.labels)
        if pixels.ndim != 3 or labels.ndim != 2:
            raise ValueError("pixels must be HxWxC and labels HxW")
        if pixels.shape[:2] != labels.shape:
            raise ValueError(
                f"pixel grid {pixels.shape[:2]} and label map {labels.shape} differ"
            )
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValueError("labels must be integer class ids")
        if labels.size and labels.min() < 0:
            raise ValueError("labels must be non-negative")
        if not np.all(np.isfinite(pixels)) or pixels.min(initial=0) < 0 or pixels.max(initial=0) > 1:
            raise ValueError("pixel intensities must lie in [0, 1]")
        pixels.setflags(write=False)
        labels = labels.astype(np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "labels", labels)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def classes(self) -> set[int]:
        vals = np.unique(self.labels)
        return {int(v) for v in vals if v != self.ignore_label}


@dataclass(frozen=True, eq=False)
class Patch:
    pixels: np.ndarray  # (S, S, C)
    label: int
    image_index: int
    rect: Rect


@dataclass
class RunConfig:
    """Hyper-parameters of one tuning run.

    ``learning_rate_schedule`` holds ``(start_iteration, rate)`` pairs; when
    left empty it becomes 0.01 for the first three quarters of the run and
    0.001 afterwards.
    """

    seed: int = 0
    images_per_batch: int = 16
    patches_per_image: int = 10
    patch_resize: int = 32
    margin_alpha: float = 2.1
    embed_dim: int = 32
    hidden_dim: int = 64
    learning_rate_schedule: list = field(default_factory=list)
    iterations: int = 400
    overlap_iou_max: float = 0.5
    patch_scale_range: tuple = (0.2, 0.6)

    def __post_init__(self):
        if not self.learning_rate_schedule:
            self.learning_rate_schedule = default_schedule(self.iterations)
        self.learning_rate_schedule = sorted(
            (int(i), float(r)) for i, r in self.learning_rate_schedule
        )
        self.patch_scale_range = tuple(float(v) for v in self.patch_scale_range)
        self.validate()

    def validate(self):
        lo, hi = self.patch_scale_range
        problems = []
        if self.images_per_batch < 1:
            problems.append("images_per_batch must be >= 1")
        if self.patches_per_image < 1:
            problems.append("patches_per_image must be >= 1")
        if self.patch_resize < 1:
            problems.append("patch_resize must be >= 1")
        if self.margin_alpha < 0:
            problems.append("margin_alpha must be >= 0")
        if self.embed_dim < 1 or self.hidden_dim < 1:
            problems.append("embed_dim and hidden_dim must be >= 1")
        if self.iterations < 0:
            problems.append("iterations must be >= 0")
        if not 0.0 <= self.overlap_iou_max <= 1.0:
            problems.append("overlap_iou_max must lie in [0, 1]")
        if not 0.0 < lo <= hi <= 1.0:
            problems.append("patch_scale_range needs 0 < min <= max <= 1")
        if any(r <= 0 for _, r in self.learning_rate_schedule):
            problems.append("learning rates must be positive")
        if problems:
            raise ValueError("; ".join(problems))

    def rate_at(self, iteration: int) -> float:
        rate = self.learning_rate_schedule[0][1]
        for start, r in self.learning_rate_schedule:
            if iteration >= start:
                rate = r
        return rate


def default_schedule(iterations: int, base=0.01, dropped=0.001) -> list:
    # same 6000/8000 proportion as the full-scale schedule
    return [(0, base), ((3 * iterations) // 4, dropped)]


# ---------------------------------------------------------------- PNM I/O

def _pnm_header(raw: bytes, path):
    """Return the four header tokens and the offset of the pixel data."""
    tokens, i, n = [], 0, len(raw)
    while len(tokens) < 4:
        while i < n and (raw[i:i + 1].isspace() or raw[i:i + 1] == b"#"):
            if raw[i:i + 1] == b"#":
                while i < n and raw[i:i + 1] not in (b"\n", b"\r"):
                    i += 1
            else:
                i += 1
        start = i
        while i < n and not raw[i:i + 1].isspace() and raw[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise DatasetError(f"{path}: malformed PNM header")
        tokens.append(raw[start:i])
    if i >= n or not raw[i:i + 1].isspace():
        raise DatasetError(f"{path}: malformed PNM header")
    return tokens, i + 1


def read_pnm(path) -> np.ndarray:
    """Read an 8-bit binary PGM (P5) or PPM (P6) file as a uint8 array."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DatasetError(f"{path}: cannot read ({exc})") from exc
    (magic, *dims), offset = _pnm_header(raw, path)
    if magic not in (b"P5", b"P6") or not all(d.isdigit() for d in dims):
        raise DatasetError(f"{path}: malformed PNM header")
    width, height, maxval = (int(d) for d in dims)
    if maxval != 255 or width < 1 or height < 1:
        raise DatasetError(f"{path}: only 8-bit images with maxval 255 are supported")
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    body = raw[offset:offset + need]
    if len(body) < need:
        raise DatasetError(f"{path}: truncated pixel data ({len(body)} < {need} bytes)")
    arr = np.frombuffer(body, dtype=np.uint8).reshape(height, width, channels)
    return arr if channels == 3 else arr[:, :, 0]


def write_pnm(path, arr: np.ndarray):
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot store array of shape {arr.shape} as PGM/PPM")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(b"%s\n%d %d\n255\n" % (magic, w, h))
        f.write(arr.tobytes())


def _pair_indices(root: Path) -> list[int]:
    pat = re.compile(r"^(image|label)_(\d+)\.(ppm|pgm)$")
    found = {}
    for name in os.listdir(root):
        m = pat.match(name)
        if m:
            found.setdefault(int(m.group(2)), set()).add(m.group(1))
    return sorted(found)


def load_dataset(root, ignore_label: int = IGNORE_LABEL) -> list[LabeledImage]:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    indices = _pair_indices(root)
    if not indices:
        raise DatasetError(f"{root}: no image_k.ppm / label_k.pgm pairs found")
    if indices != list(range(len(indices))):
        missing = sorted(set(range(max(indices) + 1)) - set(indices))
        raise DatasetError(f"{root}: missing pair for index {missing[0]}")

    images = []
    for k in indices:
        img_path, lab_path = root / f"image_{k}.ppm", root / f"label_{k}.pgm"
        for p in (img_path, lab_path):
            if not p.exists():
                raise DatasetError(f"{p}: missing file of pair {k}")
        pixels = read_pnm(img_path)
        labels = read_pnm(lab_path)
        if pixels.ndim != 3:
            raise DatasetError(f"{img_path}: expected an RGB (P6) image")
        if labels.ndim != 2:
            raise DatasetError(f"{lab_path}: expected a grayscale (P5) label map")
        if pixels.shape[:2] != labels.shape:
            raise DatasetError(
                f"{lab_path}: label map {labels.shape[1]}x{labels.shape[0]} does not "
                f"match image {pixels.shape[1]}x{pixels.shape[0]}"
            )
        labels = labels.astype(np.int64)
        labels[labels == IGNORE_LABEL] = ignore_label
        images.append(LabeledImage(pixels / 255.0, labels, ignore_label))
    return images


def write_dataset(images, root):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for k, im in enumerate(images):
        labels = np.array(im.labels, dtype=np.int64)
        labels[labels == im.ignore_label] = IGNORE_LABEL
        if labels.max(initial=0) > 255:
            raise ValueError(f"image {k}: label {labels.max()} does not fit in 8 bits")
        pixels = im.pixels
        if pixels.shape[2] == 1:
            pixels = np.repeat(pixels, 3, axis=2)
        elif pixels.shape[2] != 3:
            raise ValueError(f"image {k}: {pixels.shape[2]} channels cannot be stored as PPM")
        write_pnm(root / f"image_{k}.ppm", np.rint(pixels * 255.0))
        write_pnm(root / f"label_{k}.pgm", labels)


# ------------------------------------------------------------- synthetic

def class_colors(num_classes: int) -> np.ndarray:
    """Evenly spaced hues with alternating brightness, one RGB row per class."""
    cols = []
    for c in range(num_classes):
        v = 0.95 if c % 2 == 0 else 0.6
        cols.append(colorsys.hsv_to_rgb(c / num_classes, 0.85, v))
    return np.array(cols)


_PLACEMENT_TRIES = 20


def _boxes_touch(a: Rect, b: Rect) -> bool:
    return (a.x < b.x + b.w and b.x < a.x + a.w and a.y < b.y + b.h and b.y < a.y + a.h)


def _extent_bounds(n: int, scale) -> tuple[int, int]:
    lo = min(n, max(1, int(round(scale[0] * n))))
    hi = min(n, max(lo, int(round(scale[1] * n))))
    return lo, hi + 1


def make_synthetic(num_images: int, num_classes: int, size=(64, 64), seed: int = 0,
                   noise: float = 0.05, shape_scale=(0.25, 0.6)) -> list[LabeledImage]:
    """Scenes of 1-3 non-overlapping filled rectangles/ellipses over a class-0 background.

    Each class has its own base colour; per-pixel gaussian noise is added and
    intensities are quantised to 8 bits so the result survives a disk
    round-trip unchanged. ``shape_scale`` bounds each shape's extent as a
    fraction of the image side.
    """
    if num_classes < 2:
        raise ValueError("make_synthetic needs num_classes >= 2")
    if num_images < 1:
        raise ValueError("num_images must be >= 1")
    if isinstance(size, int):
        size = (size, size)
    H, W = size
    colors = class_colors(num_classes)
    rng = derive_rng(seed, STREAM_SYNTH)
    yy, xx = np.mgrid[0:H, 0:W]
    out = []
    for _ in range(num_images):
        labels = np.zeros((H, W), dtype=np.int64)
        boxes = []
        for _ in range(rng.integers(1, 4)):
            cls = int(rng.integers(1, num_classes))
            sh = int(rng.integers(*_extent_bounds(H, shape_scale)))
            sw = int(rng.integers(*_extent_bounds(W, shape_scale)))
            ellipse = rng.random() < 0.5
            # bounding boxes stay disjoint; a shape that finds no room is dropped
            for _ in range(_PLACEMENT_TRIES):
                y0 = int(rng.integers(0, H - sh + 1))
                x0 = int(rng.integers(0, W - sw + 1))
                box = Rect(x0, y0, sw, sh)
                if all(not _boxes_touch(box, b) for b in boxes):
                    break
            else:
                continue
            boxes.append(box)
            if ellipse:
                cy, cx = y0 + (sh - 1) / 2, x0 + (sw - 1) / 2
                mask = ((yy - cy) / (sh / 2)) ** 2 + ((xx - cx) / (sw / 2)) ** 2 <= 1.0
            else:
                mask = (yy >= y0) & (yy < y0 + sh) & (xx >= x0) & (xx < x0 + sw)
            labels[mask] = cls
        pixels = colors[labels] + rng.normal(0.0, noise, size=(H, W, 3))
        pixels = np.rint(np.clip(pixels, 0.0, 1.0) * 255.0) / 255.0
        out.append(LabeledImage(pixels, labels))
    return out
