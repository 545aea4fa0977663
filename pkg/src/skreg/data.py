"""Dataset generation, augmentation, class weighting and image file I/O.

Images are (3, H, W) float64 in [0, 1]. A generated image is a binary shape
mask colored with a random foreground and background, so a clean sample
contains exactly two distinct colors. Splits draw from disjoint instance-seed
ranges and the whole dataset is a pure function of its config and seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import DimensionMismatch, EmptyClass, InvalidConfig, MalformedImage
from .shapes import ShapeClass, phase1_classes, phase2_classes, render_mask, _INSTANCE_SALT

SPLITS = ("train", "val", "test")
_SPLIT_CODE = {"train": 0, "val": 1, "test": 2}
_COUNT_SALT = 3571
_MIN_COLOR_DIST = 0.35


@dataclass
class LabeledImage:
    pixels: np.ndarray   # (3, H, W) in [0, 1]
    label: int
    split: str


@dataclass
class SplitCounts:
    """Per-class example counts. train may be an (lo, hi) range, in which case
    each class draws its own count from the dataset seed (imbalanced sets)."""

    train: int | tuple[int, int] = 24
    val: int = 6
    test: int = 0

    def resolve_train(self, classes: int, seed: int) -> list[int]:
        if isinstance(self.train, int):
            counts = [self.train] * classes
        else:
            lo, hi = self.train
            rng = np.random.default_rng((seed, _COUNT_SALT))
            counts = [int(v) for v in rng.integers(lo, hi + 1, classes)]
        return counts


@dataclass
class Dataset:
    images: list[LabeledImage]
    classes: list[ShapeClass]
    image_size: int
    seed: int
    family: str

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def split(self, name: str) -> list[LabeledImage]:
        return [im for im in self.images if im.split == name]

    def arrays(self, name: str):
        subset = self.split(name)
        if not subset:
            return np.zeros((0, 3, self.image_size, self.image_size)), np.zeros(0, dtype=int)
        x = np.stack([im.pixels for im in subset])
        y = np.array([im.label for im in subset], dtype=int)
        return x, y


def _pick_colors(rng):
    fg = rng.uniform(0.0, 1.0, 3)
    bg = rng.uniform(0.0, 1.0, 3)
    for _ in range(16):
        if np.linalg.norm(fg - bg) >= _MIN_COLOR_DIST:
            break
        bg = rng.uniform(0.0, 1.0, 3)
    else:
        bg = np.clip(1.0 - fg, 0.0, 1.0)
    return fg, bg


def render_instance(cls: ShapeClass, image_size: int, rng) -> np.ndarray:
    """One colored instance: binary mask times foreground over background."""
    mask = render_mask(cls, image_size, rng)
    fg, bg = _pick_colors(rng)
    return np.where(mask[None, :, :], fg[:, None, None], bg[:, None, None])


def generate_dataset(classes: int, per_class: SplitCounts, image_size: int, seed: int,
                     family: str = "phase1") -> Dataset:
    """Deterministic dataset of colored silhouettes.

    Instances are seeded per (dataset seed, class, split, index), which keeps
    the splits disjoint by construction.
    """
    if classes < 2:
        raise InvalidConfig("need at least 2 classes")
    if image_size < 16:
        raise InvalidConfig("image_size must be at least 16")
    if family == "phase1":
        shape_classes = phase1_classes(classes, seed)
    elif family == "phase2":
        shape_classes = phase2_classes(classes, seed)
    else:
        raise InvalidConfig(f"unknown dataset family {family!r}")
    train_counts = per_class.resolve_train(classes, seed)
    if min(train_counts) < 1 or per_class.val < 1:
        raise InvalidConfig("per-class train/val counts must be >= 1")

    images = []
    for cls in shape_classes:
        counts = {"train": train_counts[cls.id], "val": per_class.val, "test": per_class.test}
        for split in SPLITS:
            for i in range(counts[split]):
                rng = np.random.default_rng(
                    (seed, _INSTANCE_SALT, cls.id, _SPLIT_CODE[split], i))
                pixels = render_instance(cls, image_size, rng)
                images.append(LabeledImage(pixels=pixels, label=cls.id, split=split))
    return Dataset(images=images, classes=shape_classes, image_size=image_size,
                   seed=seed, family=family)


def class_weights(dataset: Dataset) -> np.ndarray:
    """w_c = total / (classes * count_c) over the train split.

    The example-weighted mean of the result is exactly 1, so weighted losses
    stay on the same scale as unweighted ones.
    """
    counts = np.zeros(dataset.num_classes)
    for im in dataset.split("train"):
        counts[im.label] += 1
    if np.any(counts == 0):
        missing = np.nonzero(counts == 0)[0].tolist()
        raise EmptyClass(f"classes without training examples: {missing}")
    total = counts.sum()
    return total / (dataset.num_classes * counts)


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentConfig:
    max_shift: float = 0.10    # fraction of width/height
    max_rotate: float = 25.0   # degrees
    flip_prob: float = 0.5


def warp_image(pixels: np.ndarray, angle_deg: float, shift: tuple[float, float],
               flip: bool) -> np.ndarray:
    """Nearest-neighbor rotate/translate (optionally h-flip first).

    Out-of-frame samples are filled with the per-channel median of the four
    corners, i.e. the background color of a clean silhouette.
    """
    c, h, w = pixels.shape
    src = pixels[:, :, ::-1] if flip else pixels
    theta = np.deg2rad(angle_deg)
    tx, ty = shift
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    dx = xx - cx - tx
    dy = yy - cy - ty
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    sx = cos_t * dx + sin_t * dy + cx
    sy = -sin_t * dx + cos_t * dy + cy
    sj = np.rint(sx).astype(np.int64)
    si = np.rint(sy).astype(np.int64)
    inside = (si >= 0) & (si < h) & (sj >= 0) & (sj < w)
    si_c = np.clip(si, 0, h - 1)
    sj_c = np.clip(sj, 0, w - 1)
    out = src[:, si_c, sj_c]
    corners = src[:, [0, 0, -1, -1], [0, -1, 0, -1]]
    fill = np.median(corners, axis=1)
    out = np.where(inside[None, :, :], out, fill[:, None, None])
    return np.clip(out, 0.0, 1.0)


def augment(img: LabeledImage, rng, cfg: AugmentConfig = AugmentConfig()) -> LabeledImage:
    """Random flip/rotation/translation; label preserved, pixels stay in [0, 1].

    The rng is consumed in a fixed order (flip, angle, dy, dx) regardless of
    the configured magnitudes, so training streams stay aligned across
    configurations.
    """
    flip = bool(rng.random() < cfg.flip_prob)
    angle = float(rng.uniform(-cfg.max_rotate, cfg.max_rotate))
    _, h, w = img.pixels.shape
    ty = float(rng.uniform(-cfg.max_shift, cfg.max_shift) * h)
    tx = float(rng.uniform(-cfg.max_shift, cfg.max_shift) * w)
    return LabeledImage(pixels=warp_image(img.pixels, angle, (tx, ty), flip),
                        label=img.label, split=img.split)


# ---------------------------------------------------------------------------
# image and manifest I/O


def save_png(path, pixels: np.ndarray) -> None:
    """Write a (3, H, W) [0,1] image as 8-bit RGB."""
    if pixels.ndim != 3 or pixels.shape[0] != 3:
        raise DimensionMismatch(f"expected (3, H, W) pixels, got {pixels.shape}")
    arr = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """Read an 8-bit RGB PNG back into (3, H, W) floats in [0, 1]."""
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float64) / 255.0
    except UnidentifiedImageError as exc:
        raise MalformedImage(f"{path}: not a decodable image") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_kernel_grid(path, kernels, max_per_row: int = 10, tile_scale: int = 8,
                     gap: int = 2) -> None:
    """Render kernels as a tiled PNG, one tile per kernel.

    Each tile is min-max normalized on its own before 8-bit quantization.
    Layout: up to max_per_row tiles per row, so n <= max_per_row gives a
    single row of n columns.
    """
    kernels = np.asarray(kernels, dtype=np.float64)
    if kernels.ndim == 3:          # (n, kh, kw) grayscale
        kernels = np.repeat(kernels[:, None, :, :], 3, axis=1)
    if kernels.ndim != 4 or kernels.shape[0] == 0:
        raise InvalidConfig(f"need a non-empty (n, c, kh, kw) kernel stack, got {kernels.shape}")
    n, c, kh, kw = kernels.shape
    if c == 1:
        kernels = np.repeat(kernels, 3, axis=1)
    elif c != 3:
        raise DimensionMismatch(f"kernel tiles must have 1 or 3 channels, got {c}")
    cols = min(n, max_per_row)
    rows = (n + cols - 1) // cols
    th, tw = kh * tile_scale, kw * tile_scale
    canvas = np.zeros((3, rows * th + gap * (rows - 1), cols * tw + gap * (cols - 1)))
    for i in range(n):
        tile = kernels[i]
        lo, hi = tile.min(), tile.max()
        norm = (tile - lo) / (hi - lo) if hi > lo else np.full_like(tile, 0.5)
        big = np.repeat(np.repeat(norm, tile_scale, axis=1), tile_scale, axis=2)
        r, col = divmod(i, cols)
        y0, x0 = r * (th + gap), col * (tw + gap)
        canvas[:, y0:y0 + th, x0:x0 + tw] = big
    save_png(path, canvas)


def save_dataset(dataset: Dataset, root) -> str:
    """Write <root>/<split>/<class>/img_xxxx.png plus manifest.json; returns
    the manifest path."""
    entries = []
    counters: dict = {}
    for im in dataset.images:
        key = (im.split, im.label)
        i = counters.get(key, 0)
        counters[key] = i + 1
        rel = os.path.join(im.split, f"{im.label:03d}", f"img_{i:04d}.png")
        full = os.path.join(root, rel)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        save_png(full, im.pixels)
        entries.append({"path": rel, "label": im.label, "split": im.split})
    manifest = os.path.join(root, "manifest.json")
    with open(manifest, "w") as fh:
        json.dump(entries, fh, indent=1)
    return manifest


def load_image_dir(root) -> list[LabeledImage]:
    """Load <root>/<split>/<class>/*.png; class directory names sort to ids.

    This is the substitution point for real silhouette data laid out the same
    way.
    """
    if not os.path.isdir(root):
        raise OSError(f"{root} is not a directory")
    class_names = sorted({
        name
        for split in SPLITS
        if os.path.isdir(os.path.join(root, split))
        for name in os.listdir(os.path.join(root, split))
        if os.path.isdir(os.path.join(root, split, name))
    })
    if not class_names:
        raise OSError(f"{root} contains no <split>/<class> directories")
    label_of = {name: i for i, name in enumerate(class_names)}
    images = []
    for split in SPLITS:
        sdir = os.path.join(root, split)
        if not os.path.isdir(sdir):
            continue
        for name in sorted(os.listdir(sdir)):
            cdir = os.path.join(sdir, name)
            if not os.path.isdir(cdir):
                continue
            for fname in sorted(os.listdir(cdir)):
                if not fname.lower().endswith(".png"):
                    continue
                pixels = load_png(os.path.join(cdir, fname))
                images.append(LabeledImage(pixels=pixels, label=label_of[name], split=split))
    return images
