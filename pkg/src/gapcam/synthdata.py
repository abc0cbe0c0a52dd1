"""Procedural grayscale localization benchmark: one bright shape per image on
a noisy, cluttered background, with an exact ground-truth box.

Five classes: 0 disk, 1 square, 2 triangle, 3 ring, 4 two-disk pair. The
two-disk class is deliberately multi-part: its ground-truth box spans both
disks, so a localizer that latches onto the single most discriminative blob
scores poorly on it.

Shape interiors are speckled (every foreground pixel draws its own value
from ``shape_value_range``) rather than flat. A flat fill makes interiors
carry no class evidence, and classifiers then localize only boundary
fragments; speckle keeps the entire extent informative, which is the point
of the benchmark.

Everything derives from explicit PRNG seed material; the same
(class, seed, config) triple always renders the identical sample, and
parallel generation can partition the seed space by sample index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .localize import BBox


@dataclass(frozen=True)
class SynthConfig:
    """Generator knobs. Defaults are the benchmark settings.

    ``scale_range`` is the shape extent as a fraction of the image side.
    Foreground pixels draw independent values from ``shape_value_range``.
    Clutter values stay below 60% of the dimmest possible shape pixel, so
    the class-bearing shape is always the brightest structure in the image.
    """

    image_hw: tuple[int, int] = (64, 64)
    scale_range: tuple[float, float] = (0.25, 0.60)
    shape_value_range: tuple[float, float] = (0.90, 1.0)
    clutter_value_range: tuple[float, float] = (0.2, 0.5)
    noise_amplitude: float = 0.12
    max_clutter: int = 3
    pair_radius_range: tuple[float, float] = (0.09, 0.13)


DEFAULT_CONFIG = SynthConfig()

CLASS_NAMES = ("disk", "square", "triangle", "ring", "two_disk")
N_CLASSES = len(CLASS_NAMES)


@dataclass
class Sample:
    """One rendered image with its label, tight ground-truth box, and the
    placement parameters that produced it."""

    image: np.ndarray  # (1, H, W) float32 in [0, 1]
    label: int
    gt_box: BBox
    meta: dict = field(default_factory=dict)


def _disk_patch(extent: int) -> np.ndarray:
    c = (extent - 1) / 2.0
    yy, xx = np.mgrid[0:extent, 0:extent]
    return (xx - c) ** 2 + (yy - c) ** 2 <= c * c + 1e-9


def _ring_patch(extent: int, hole_ratio: float) -> np.ndarray:
    c = (extent - 1) / 2.0
    yy, xx = np.mgrid[0:extent, 0:extent]
    d2 = (xx - c) ** 2 + (yy - c) ** 2
    return (d2 <= c * c + 1e-9) & (d2 > (hole_ratio * c) ** 2)


def _triangle_patch(extent: int, rotation: int) -> np.ndarray:
    """Filled isoceles triangle, apex up, then rotated by ``rotation`` quarter
    turns. Row y spans a half-width growing linearly from apex to base."""
    c = (extent - 1) / 2.0
    yy, xx = np.mgrid[0:extent, 0:extent]
    half_width = yy / 2.0
    patch = np.abs(xx - c) <= half_width + 1e-9
    return np.rot90(patch, k=rotation)


def _two_disk_patch(
    extent: int, r1: int, r2: int, orientation: int, offset: float
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """Two disjoint disks at opposite ends of one axis of the extent box.

    ``offset`` in [0, 1] slides the pair along the perpendicular axis.
    Returns the combined patch plus each disk's own mask (for per-part boxes).
    """
    yy, xx = np.mgrid[0:extent, 0:extent]

    def disk_at(cx: float, cy: float, r: int) -> np.ndarray:
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r + 1e-9

    lo = extent - 1
    rmax = max(r1, r2)
    perp = rmax + offset * (lo - 2 * rmax)
    if orientation == 0:  # horizontal
        m1, m2 = disk_at(r1, perp, r1), disk_at(lo - r2, perp, r2)
    elif orientation == 1:  # vertical
        m1, m2 = disk_at(perp, r1, r1), disk_at(perp, lo - r2, r2)
    elif orientation == 2:  # main diagonal
        m1, m2 = disk_at(r1, r1, r1), disk_at(lo - r2, lo - r2, r2)
    else:  # anti-diagonal
        m1, m2 = disk_at(lo - r1, r1, r1), disk_at(r2, lo - r2, r2)
    return m1 | m2, (m1, m2)


def generate_sample(
    class_id: int, seed_key, config: SynthConfig = DEFAULT_CONFIG
) -> Sample:
    """Render one sample. ``seed_key`` is any numpy seed material (an int or a
    sequence of ints); pass a distinct key per sample."""
    if not 0 <= class_id < N_CLASSES:
        raise ValueError(f"class_id must be in [0, {N_CLASSES}), got {class_id}")
    rng = np.random.default_rng(seed_key)
    h, w = config.image_hw
    img = rng.uniform(0.0, config.noise_amplitude, size=(h, w))

    scale = float(rng.uniform(*config.scale_range))
    extent = max(4, round(scale * min(h, w)))
    x0 = int(rng.integers(0, w - extent + 1))
    y0 = int(rng.integers(0, h - extent + 1))

    meta: dict = {
        "seed_key": seed_key,
        "class_name": CLASS_NAMES[class_id],
        "extent": extent,
        "origin": (x0, y0),
    }
    parts: tuple[np.ndarray, np.ndarray] | None = None
    if class_id == 0:
        patch = _disk_patch(extent)
        meta["radius"] = (extent - 1) / 2.0
    elif class_id == 1:
        patch = np.ones((extent, extent), dtype=bool)
    elif class_id == 2:
        rotation = int(rng.integers(0, 4))
        patch = _triangle_patch(extent, rotation)
        meta["rotation"] = rotation
    elif class_id == 3:
        hole_ratio = float(rng.uniform(0.45, 0.65))
        patch = _ring_patch(extent, hole_ratio)
        meta["hole_ratio"] = hole_ratio
        meta["radius"] = (extent - 1) / 2.0
    else:
        # floor keeps r1 + r2 < (extent-1)/2, so the disks never touch
        r1 = max(2, int(float(rng.uniform(*config.pair_radius_range)) * extent))
        r2 = max(2, int(float(rng.uniform(*config.pair_radius_range)) * extent))
        orientation = int(rng.integers(0, 4))
        offset = float(rng.uniform(0.0, 1.0))
        patch, parts = _two_disk_patch(extent, r1, r2, orientation, offset)
        meta["disk_radii"] = (r1, r2)
        meta["orientation"] = orientation

    n_clutter = int(rng.integers(0, config.max_clutter + 1))
    meta["n_clutter"] = n_clutter
    for _ in range(n_clutter):
        cw = int(rng.integers(3, 13))
        ch = int(rng.integers(3, 13))
        cx = int(rng.integers(0, w - cw + 1))
        cy = int(rng.integers(0, h - ch + 1))
        cval = float(rng.uniform(*config.clutter_value_range))
        img[cy : cy + ch, cx : cx + cw] = cval

    region = img[y0 : y0 + extent, x0 : x0 + extent]
    region[patch] = rng.uniform(*config.shape_value_range, size=int(patch.sum()))
    image = img.astype(np.float32)[None]

    fg = np.zeros((h, w), dtype=bool)
    fg[y0 : y0 + extent, x0 : x0 + extent] = patch
    meta["foreground"] = fg
    gt_box = BBox.of_mask(fg)
    assert gt_box is not None  # every class renders at least one pixel
    if parts is not None:
        boxes = []
        for part in parts:
            full = np.zeros((h, w), dtype=bool)
            full[y0 : y0 + extent, x0 : x0 + extent] = part
            boxes.append(BBox.of_mask(full))
        meta["part_boxes"] = tuple(boxes)
    return Sample(image=image, label=class_id, gt_box=gt_box, meta=meta)


@dataclass
class Dataset:
    """All samples plus a deterministic class-balanced 80/20 split."""

    samples: list[Sample]
    train_indices: np.ndarray
    test_indices: np.ndarray
    config: SynthConfig
    seed: int

    def stack(self, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(images, labels) arrays for the given sample indices."""
        images = np.stack([self.samples[i].image for i in indices])
        labels = np.array([self.samples[i].label for i in indices])
        return images, labels

    @property
    def train_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.stack(self.train_indices)

    @property
    def test_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.stack(self.test_indices)

    def test_samples(self) -> list[Sample]:
        return [self.samples[i] for i in self.test_indices]


def generate_dataset(
    n_per_class: int, seed: int, config: SynthConfig = DEFAULT_CONFIG
) -> Dataset:
    """Class-balanced dataset of ``5 * n_per_class`` samples.

    Sample i of class c uses seed key [seed, c, i], so any sample can be
    regenerated in isolation. The 80/20 split shuffles within each class,
    keeping both splits balanced.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    samples: list[Sample] = []
    for class_id in range(N_CLASSES):
        for index in range(n_per_class):
            samples.append(generate_sample(class_id, [seed, class_id, index], config))

    # 20% per class, but never starve the test split when n >= 2
    n_test = max(1, n_per_class // 5) if n_per_class >= 2 else 0
    train_idx: list[int] = []
    test_idx: list[int] = []
    split_rng = np.random.default_rng([seed, N_CLASSES, 0])
    for class_id in range(N_CLASSES):
        base = class_id * n_per_class
        order = split_rng.permutation(n_per_class)
        test_idx.extend(base + order[:n_test])
        train_idx.extend(base + order[n_test:])
    return Dataset(
        samples=samples,
        train_indices=np.array(sorted(train_idx)),
        test_indices=np.array(sorted(test_idx)),
        config=config,
        seed=seed,
    )
