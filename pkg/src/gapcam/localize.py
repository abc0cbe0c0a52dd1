"""From activation map to bounding box: relative-max thresholding, 8-connected
component labeling, and the tight/loose multi-box proposal scheme.

Coordinates are pixel indices with INCLUSIVE box edges: a single pixel is the
box (x, y, x, y) with area 1. Everything here is pure and operates on plain
arrays, so it composes with maps from any source.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with inclusive integer pixel corners."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self) -> None:
        if not (self.x_min <= self.x_max and self.y_min <= self.y_max):
            raise ValueError(f"degenerate box {self}")
        if min(self.x_min, self.y_min) < 0:
            raise ValueError(f"negative coordinates in {self}")

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1

    @classmethod
    def full_image(cls, height: int, width: int) -> "BBox":
        return cls(0, 0, width - 1, height - 1)

    @classmethod
    def of_mask(cls, mask: np.ndarray) -> "BBox | None":
        """Tight box of a boolean mask's true pixels; None when empty."""
        rows = np.flatnonzero(mask.any(axis=1))
        cols = np.flatnonzero(mask.any(axis=0))
        if rows.size == 0:
            return None
        return cls(int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1]))


@dataclass
class SegmentMask:
    """A thresholded map plus (once labeled) its 8-connected components.

    ``labels`` uses 0 for background and 1..n_components for regions,
    numbered by each region's first pixel in row-major scan order.
    """

    mask: np.ndarray
    threshold_used: float
    labels: np.ndarray | None = None
    n_components: int = 0


def threshold_mask(cam_upsampled: np.ndarray, rel_threshold: float = 0.2) -> SegmentMask:
    """Keep pixels at or above ``rel_threshold`` of the map's max.

    A map whose max is not positive has no meaningful "fraction of max" and
    yields an empty mask; downstream box extraction falls back to the full
    image.
    """
    if not 0.0 < rel_threshold < 1.0:
        raise ValueError(f"rel_threshold must lie in (0, 1), got {rel_threshold}")
    cam = np.asarray(cam_upsampled)
    peak = float(cam.max())
    cut = rel_threshold * peak
    if peak > 0.0:
        mask = cam >= cut
    else:
        mask = np.zeros(cam.shape, dtype=bool)
    return SegmentMask(mask=mask, threshold_used=cut)


def label_components(segment: SegmentMask | np.ndarray) -> SegmentMask:
    """Label maximal 8-connected regions with union-find over row pairs.

    Component ids follow first-pixel scan order, so labeling is fully
    deterministic regardless of internal merge order.
    """
    if isinstance(segment, SegmentMask):
        mask = segment.mask
        threshold = segment.threshold_used
    else:
        mask = np.asarray(segment, dtype=bool)
        threshold = float("nan")
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    parent: list[int] = [0]  # parent[i] for provisional label i; 0 unused

    def find(a: int) -> int:
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    next_label = 1
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            neighbors = []
            if y > 0:
                for dx in (-1, 0, 1):
                    nx = x + dx
                    if 0 <= nx < w and labels[y - 1, nx]:
                        neighbors.append(labels[y - 1, nx])
            if x > 0 and labels[y, x - 1]:
                neighbors.append(labels[y, x - 1])
            if not neighbors:
                labels[y, x] = next_label
                parent.append(next_label)
                next_label += 1
            else:
                roots = [find(n) for n in neighbors]
                best = min(roots)
                labels[y, x] = best
                for r in roots:
                    parent[r] = best

    # Flatten the forest, then renumber roots by first appearance in scan order.
    remap: dict[int, int] = {}
    out = np.zeros_like(labels)
    flat = labels.reshape(-1)
    oflat = out.reshape(-1)
    for i in range(flat.size):
        if flat[i]:
            root = find(int(flat[i]))
            if root not in remap:
                remap[root] = len(remap) + 1
            oflat[i] = remap[root]
    return SegmentMask(mask=mask, threshold_used=threshold, labels=out, n_components=len(remap))


def largest_component_bbox(labeled: SegmentMask) -> BBox | None:
    """Tight box of the biggest component; area ties go to the component seen
    first in scan order (the one with the smaller label). None when empty."""
    if labeled.labels is None:
        raise ValueError("mask has not been labeled; call label_components first")
    if labeled.n_components == 0:
        return None
    areas = np.bincount(labeled.labels.reshape(-1), minlength=labeled.n_components + 1)
    best = int(np.argmax(areas[1:])) + 1  # argmax takes the first max: scan order
    return BBox.of_mask(labeled.labels == best)


def union_bbox(labeled: SegmentMask) -> BBox | None:
    """Tight box around every component at once; None when empty."""
    if labeled.labels is None:
        raise ValueError("mask has not been labeled; call label_components first")
    return BBox.of_mask(labeled.labels > 0)


def cam_bbox(cam_upsampled: np.ndarray, rel_threshold: float = 0.2) -> BBox:
    """threshold -> label -> largest-component box, with the full-image box
    when nothing survives the threshold."""
    labeled = label_components(threshold_mask(cam_upsampled, rel_threshold))
    box = largest_component_bbox(labeled)
    if box is None:
        h, w = np.asarray(cam_upsampled).shape
        return BBox.full_image(h, w)
    return box


def gt_known_bbox(cam_upsampled: np.ndarray, rel_threshold: float = 0.2) -> BBox:
    """threshold -> label -> box around the UNION of components.

    Box rule for class-given scoring. Upsampled maps of thin evidence (shape
    outlines) often fragment at the 0.2 cut; the largest fragment then boxes
    one edge of the object. Taking the union box instead keeps the threshold
    but scores the whole activated extent, which is what the class-given
    measure is after. Full-image fallback when nothing survives.
    """
    labeled = label_components(threshold_mask(cam_upsampled, rel_threshold))
    box = union_bbox(labeled)
    if box is None:
        h, w = np.asarray(cam_upsampled).shape
        return BBox.full_image(h, w)
    return box


@dataclass(frozen=True)
class BoxProposal:
    """One proposed localization: the class it argues for, its rank in the
    prediction ordering (1-based), the box, and how the box was derived."""

    class_id: int
    class_rank: int
    box: BBox
    kind: str  # "tight" | "loose" | "plain"


TIGHT_THRESHOLD = 0.2
LOOSE_THRESHOLD = 0.1


def _loose_box(cam_up: np.ndarray) -> BBox:
    labeled = label_components(threshold_mask(cam_up, LOOSE_THRESHOLD))
    box = union_bbox(labeled)
    if box is None:
        h, w = cam_up.shape
        return BBox.full_image(h, w)
    return box


def propose_boxes(
    ranked_cams: list[tuple[int, np.ndarray]], mode: str = "plain"
) -> list[BoxProposal]:
    """Turn per-class upsampled CAMs (descending prediction order) into boxes.

    plain: one largest-component box per class at the 0.2 threshold.
    heuristic: the top two classes each get a tight box (0.2, largest
    component) and a loose box (0.1, union of components); the third class
    gets one loose box. Five boxes total.
    """
    if mode == "plain":
        return [
            BoxProposal(class_id, rank, cam_bbox(cam_up, TIGHT_THRESHOLD), "plain")
            for rank, (class_id, cam_up) in enumerate(ranked_cams, start=1)
        ]
    if mode != "heuristic":
        raise ValueError(f"unknown proposal mode {mode!r}")
    if len(ranked_cams) < 3:
        raise ValueError(f"heuristic mode needs 3 ranked classes, got {len(ranked_cams)}")
    out: list[BoxProposal] = []
    for rank in (1, 2):
        class_id, cam_up = ranked_cams[rank - 1]
        out.append(BoxProposal(class_id, rank, cam_bbox(cam_up, TIGHT_THRESHOLD), "tight"))
        out.append(BoxProposal(class_id, rank, _loose_box(cam_up), "loose"))
    class_id, cam_up = ranked_cams[2]
    out.append(BoxProposal(class_id, 3, _loose_box(cam_up), "loose"))
    return out
