"""Procedural silhouette shapes.

Each class is a fixed geometric identity (family, vertex profile, aspect);
instances of the class share that identity but vary in pose and color. Masks
are rasterized with an even-odd scanline fill on a supersampled grid and then
thresholded, so they stay strictly binary.

Families: polygon and ellipse (smooth, used for the base domain), star and
composite (spikier / multi-part, used for the novel domain), optionally with a
hole cut out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FAMILIES = ("polygon", "ellipse", "star", "composite")

# rng stream salts, fixed so datasets are reproducible functions of their seed
_CLASS_SALT = 101
_INSTANCE_SALT = 7919


@dataclass(frozen=True)
class ShapeClass:
    """Generator parameters for one object class."""

    id: int
    family: str
    vertices: int
    aspect: float
    jitter: float                 # instance-level profile/aspect jitter
    hole: bool
    profile: tuple[float, ...]    # per-vertex radial multipliers
    orientation: float            # base rotation, radians
    extra: float = 0.0            # star inner-radius ratio / composite cross angle

    def to_json(self) -> dict:
        return {
            "id": self.id, "family": self.family, "vertices": self.vertices,
            "aspect": self.aspect, "jitter": self.jitter, "hole": self.hole,
            "profile": list(self.profile), "orientation": self.orientation,
            "extra": self.extra,
        }

    @staticmethod
    def from_json(d: dict) -> "ShapeClass":
        return ShapeClass(
            id=int(d["id"]), family=str(d["family"]), vertices=int(d["vertices"]),
            aspect=float(d["aspect"]), jitter=float(d["jitter"]), hole=bool(d["hole"]),
            profile=tuple(float(v) for v in d["profile"]),
            orientation=float(d["orientation"]), extra=float(d.get("extra", 0.0)),
        )


def phase1_classes(count: int, seed: int) -> list[ShapeClass]:
    """Smooth classes: irregular convex-ish polygons alternating with ellipses."""
    classes = []
    for cid in range(count):
        rng = np.random.default_rng((seed, _CLASS_SALT, cid))
        if cid % 2 == 0:
            k = cid // 2
            vertices = 3 + k % 6
            if k % 2 == 0:
                profile = tuple(rng.uniform(0.88, 1.0, vertices))   # near-regular
            else:
                profile = tuple(rng.uniform(0.5, 1.0, vertices))    # irregular
            classes.append(ShapeClass(
                id=cid, family="polygon", vertices=vertices,
                aspect=float(rng.uniform(0.75, 1.0)), jitter=0.04, hole=False,
                profile=profile, orientation=float(rng.uniform(0, 2 * np.pi))))
        else:
            k = cid // 2
            aspect = 0.18 + 0.72 * (k % 10) / 9.0 + float(rng.uniform(-0.02, 0.02))
            classes.append(ShapeClass(
                id=cid, family="ellipse", vertices=48, aspect=aspect, jitter=0.04,
                hole=False, profile=(1.0,), orientation=float(rng.uniform(0, 2 * np.pi))))
    return classes


def phase2_classes(count: int, seed: int) -> list[ShapeClass]:
    """Novel-domain classes: stars, crossed composites and ring shapes."""
    classes = []
    for cid in range(count):
        rng = np.random.default_rng((seed, _CLASS_SALT, 500 + cid))
        kind = cid % 3
        if kind == 0:
            points = 4 + (cid // 3) % 5
            classes.append(ShapeClass(
                id=cid, family="star", vertices=points,
                aspect=float(rng.uniform(0.85, 1.0)), jitter=0.04, hole=False,
                profile=(1.0,), orientation=float(rng.uniform(0, 2 * np.pi)),
                extra=float(rng.uniform(0.3, 0.55))))
        elif kind == 1:
            classes.append(ShapeClass(
                id=cid, family="composite", vertices=48,
                aspect=float(rng.uniform(0.22, 0.4)), jitter=0.04, hole=False,
                profile=(1.0,), orientation=float(rng.uniform(0, 2 * np.pi)),
                extra=float(np.pi / 2 + rng.uniform(-0.35, 0.35))))
        else:
            hole_aspect = float(rng.uniform(0.45, 0.95))
            classes.append(ShapeClass(
                id=cid, family="ellipse", vertices=48, aspect=hole_aspect, jitter=0.04,
                hole=True, profile=(1.0,), orientation=float(rng.uniform(0, 2 * np.pi))))
    return classes


# ---------------------------------------------------------------------------
# outlines in unit coordinates (shape fits roughly in the unit disk)


def _radial_polygon(radii: np.ndarray, aspect: float, phase: float = 0.0) -> np.ndarray:
    k = len(radii)
    ang = phase + 2 * np.pi * np.arange(k) / k
    return np.stack([radii * np.cos(ang), aspect * radii * np.sin(ang)], axis=1)


def instance_paths(cls: ShapeClass, rng) -> tuple[list[np.ndarray], list[str]]:
    """Outline paths for one instance: class identity plus per-instance jitter.

    Returns (paths, modes) with modes "add" or "sub"; paths are (V, 2) arrays.
    """
    j = cls.jitter
    aspect = cls.aspect * (1.0 + rng.uniform(-j, j))
    if cls.family == "polygon":
        radii = np.array(cls.profile) * (1.0 + rng.uniform(-j, j, cls.vertices))
        paths = [_radial_polygon(radii, aspect)]
    elif cls.family == "ellipse":
        radii = np.ones(cls.vertices) * (1.0 + rng.uniform(-j, j))
        paths = [_radial_polygon(radii, aspect)]
    elif cls.family == "star":
        inner = cls.extra * (1.0 + rng.uniform(-j, j))
        radii = np.empty(2 * cls.vertices)
        radii[0::2] = 1.0
        radii[1::2] = inner
        paths = [_radial_polygon(radii, aspect)]
    elif cls.family == "composite":
        r = np.ones(cls.vertices) * (1.0 + rng.uniform(-j, j))
        first = _radial_polygon(r, aspect)
        second = _radial_polygon(r, aspect)
        c, s = np.cos(cls.extra), np.sin(cls.extra)
        second = second @ np.array([[c, s], [-s, c]]).T
        paths = [first, second]
    else:
        raise ValueError(f"unknown family {cls.family!r}")
    modes = ["add"] * len(paths)
    if cls.hole:
        scale = 0.45 * (1.0 + rng.uniform(-j, j))
        paths.append(paths[0] * scale)
        modes.append("sub")
    return paths, modes


# ---------------------------------------------------------------------------
# rasterization


def fill_polygon(pts: np.ndarray, height: int, width: int) -> np.ndarray:
    """Even-odd scanline fill of a closed polygon given in pixel coordinates.

    Sample points sit at pixel centers (x+0.5, y+0.5); edges use a half-open
    [ymin, ymax) rule so shared vertices are counted once.
    """
    ys = np.arange(height) + 0.5
    xs = np.arange(width) + 0.5
    cnt = np.zeros((height, width), dtype=np.uint8)
    x0 = pts[:, 0]
    y0 = pts[:, 1]
    x1 = np.roll(x0, -1)
    y1 = np.roll(y0, -1)
    for e in range(len(pts)):
        ya, yb = y0[e], y1[e]
        if ya == yb:
            continue
        lo, hi = (ya, yb) if ya < yb else (yb, ya)
        rows = np.nonzero((ys >= lo) & (ys < hi))[0]
        if rows.size == 0:
            continue
        t = (ys[rows] - y0[e]) / (y1[e] - y0[e])
        xi = x0[e] + t * (x1[e] - x0[e])
        cnt[rows] += xi[:, None] <= xs[None, :]
    return (cnt & 1).astype(bool)


def rasterize_paths(paths, modes, image_size: int, supersample: int = 4) -> np.ndarray:
    """Combine filled paths into a binary mask via supersampling + 0.5 threshold."""
    s = image_size * supersample
    mask = np.zeros((s, s), dtype=bool)
    for pts, mode in zip(paths, modes):
        filled = fill_polygon(pts * supersample, s, s)
        if mode == "add":
            mask |= filled
        else:
            mask &= ~filled
    coarse = mask.reshape(image_size, supersample, image_size, supersample)
    return coarse.mean(axis=(1, 3)) >= 0.5


def render_mask(cls: ShapeClass, image_size: int, rng,
                rot_jitter: float = 0.26, scale_range=(0.78, 1.02),
                shift_frac: float = 0.05, base_radius: float = 0.36) -> np.ndarray:
    """Binary (H, W) mask for one posed instance of a class."""
    rot = cls.orientation + rng.uniform(-rot_jitter, rot_jitter)
    radius = rng.uniform(*scale_range) * base_radius * image_size
    center = image_size / 2.0 + rng.uniform(-shift_frac, shift_frac, 2) * image_size
    paths, modes = instance_paths(cls, rng)
    c, s = np.cos(rot), np.sin(rot)
    rotm = np.array([[c, s], [-s, c]])
    placed = [p @ rotm.T * radius + center for p in paths]
    return rasterize_paths(placed, modes, image_size)
