"""Thresholding, component labeling (checked against a recursive flood fill),
box extraction and the proposal modes."""

import sys

import numpy as np
import pytest

from gapcam import localize
from gapcam.localize import BBox, SegmentMask


def flood_fill_labels(mask):
    """Recursive 8-connected flood fill, labels in first-pixel scan order.

    Deliberately the dumbest possible implementation: correctness by
    inspection, used as the oracle for the union-find labeler.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    sys.setrecursionlimit(10000 + h * w * 2)

    def fill(y, x, label):
        if not (0 <= y < h and 0 <= x < w):
            return
        if not mask[y, x] or labels[y, x]:
            return
        labels[y, x] = label
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy or dx:
                    fill(y + dy, x + dx, label)

    next_label = 1
    for y in range(h):
        for x in range(w):
            if mask[y, x] and not labels[y, x]:
                fill(y, x, next_label)
                next_label += 1
    return labels


# ---------------------------------------------------------------------------
# BBox
# ---------------------------------------------------------------------------


def test_bbox_area_and_validation():
    assert BBox(2, 3, 4, 5).area == 9
    assert BBox(1, 1, 1, 1).area == 1
    with pytest.raises(ValueError):
        BBox(5, 0, 2, 3)
    with pytest.raises(ValueError):
        BBox(-1, 0, 2, 3)


def test_bbox_of_mask():
    mask = np.zeros((6, 8), dtype=bool)
    assert BBox.of_mask(mask) is None
    mask[2, 3] = True
    mask[4, 6] = True
    assert BBox.of_mask(mask) == BBox(3, 2, 6, 4)
    assert BBox.full_image(6, 8) == BBox(0, 0, 7, 5)


# ---------------------------------------------------------------------------
# thresholding
# ---------------------------------------------------------------------------


def test_threshold_twenty_percent_of_max():
    m = np.array([[10.0, 2.0], [1.9, -3.0]])
    seg = localize.threshold_mask(m, 0.2)
    np.testing.assert_array_equal(seg.mask, [[True, True], [False, False]])
    assert seg.threshold_used == pytest.approx(2.0)


def test_threshold_constant_positive_selects_all():
    seg = localize.threshold_mask(np.full((3, 3), 4.2))
    assert seg.mask.all()


def test_threshold_nonpositive_max_gives_empty():
    assert not localize.threshold_mask(-np.ones((3, 3))).mask.any()
    assert not localize.threshold_mask(np.zeros((3, 3))).mask.any()


def test_threshold_validates_range():
    with pytest.raises(ValueError):
        localize.threshold_mask(np.ones((2, 2)), 0.0)
    with pytest.raises(ValueError):
        localize.threshold_mask(np.ones((2, 2)), 1.0)


def test_threshold_monotone_in_threshold():
    rng = np.random.default_rng(0)
    for _ in range(10):
        m = rng.standard_normal((12, 12))
        lo = localize.threshold_mask(m, 0.1).mask
        hi = localize.threshold_mask(m, 0.2).mask
        assert (hi <= lo).all()  # every 0.2 pixel is also a 0.1 pixel


# ---------------------------------------------------------------------------
# component labeling
# ---------------------------------------------------------------------------


def test_label_empty_and_full():
    empty = localize.label_components(np.zeros((4, 4), dtype=bool))
    assert empty.n_components == 0
    full = localize.label_components(np.ones((4, 4), dtype=bool))
    assert full.n_components == 1
    assert (full.labels == 1).all()


def test_label_diagonal_pixels_connect():
    mask = np.eye(5, dtype=bool)
    seg = localize.label_components(mask)
    assert seg.n_components == 1


def test_label_separate_regions():
    mask = np.zeros((6, 6), dtype=bool)
    mask[0:2, 0:2] = True
    mask[4:6, 4:6] = True
    seg = localize.label_components(mask)
    assert seg.n_components == 2
    assert seg.labels[0, 0] == 1  # first in scan order gets label 1
    assert seg.labels[4, 4] == 2


def test_label_u_shape_merges_to_one():
    # Two prongs that only meet at the bottom: union-find must merge them.
    mask = np.zeros((4, 5), dtype=bool)
    mask[:, 0] = True
    mask[:, 4] = True
    mask[3, :] = True
    seg = localize.label_components(mask)
    assert seg.n_components == 1
    assert (seg.labels[mask] == 1).all()


def test_label_matches_flood_fill_on_random_masks():
    rng = np.random.default_rng(1)
    for trial in range(200):
        density = 0.2 + 0.6 * (trial % 7) / 6
        mask = rng.random((16, 16)) < density
        got = localize.label_components(mask)
        want = flood_fill_labels(mask)
        np.testing.assert_array_equal(got.labels, want)
        assert got.n_components == want.max()


# ---------------------------------------------------------------------------
# largest component box
# ---------------------------------------------------------------------------


def test_largest_component_picks_bigger_area():
    mask = np.zeros((8, 8), dtype=bool)
    mask[0, 0:5] = True  # area 5
    mask[3:6, 3:6] = True  # area 9
    box = localize.largest_component_bbox(localize.label_components(mask))
    assert box == BBox(3, 3, 5, 5)


def test_largest_component_single_pixel():
    mask = np.zeros((8, 8), dtype=bool)
    mask[3, 4] = True
    box = localize.largest_component_bbox(localize.label_components(mask))
    assert box == BBox(4, 3, 4, 3)


def test_largest_component_tie_first_scan_order():
    mask = np.zeros((6, 6), dtype=bool)
    mask[0, 4:6] = True  # first in scan order, area 2
    mask[5, 0:2] = True  # same area, later
    box = localize.largest_component_bbox(localize.label_components(mask))
    assert box == BBox(4, 0, 5, 0)


def test_largest_component_empty_returns_none():
    seg = localize.label_components(np.zeros((4, 4), dtype=bool))
    assert localize.largest_component_bbox(seg) is None
    with pytest.raises(ValueError):
        localize.largest_component_bbox(SegmentMask(np.zeros((2, 2), dtype=bool), 0.1))


def test_cam_bbox_fallback_full_image():
    box = localize.cam_bbox(-np.ones((10, 12)))
    assert box == BBox(0, 0, 11, 9)


def test_gt_known_bbox_spans_all_components():
    m = np.zeros((12, 12))
    m[1:3, 1:3] = 1.0  # two separated blobs above threshold
    m[8:11, 7:10] = 0.9
    assert localize.cam_bbox(m) == BBox(7, 8, 9, 10)  # largest fragment only
    assert localize.gt_known_bbox(m) == BBox(1, 1, 9, 10)  # both


def test_gt_known_bbox_fallback_and_containment():
    assert localize.gt_known_bbox(-np.ones((6, 9))) == BBox(0, 0, 8, 5)
    rng = np.random.default_rng(9)
    for _ in range(20):
        m = rng.standard_normal((16, 16))
        m[4:9, 4:9] += 2.0
        tight = localize.cam_bbox(m)
        wide = localize.gt_known_bbox(m)
        assert wide.x_min <= tight.x_min and wide.y_min <= tight.y_min
        assert wide.x_max >= tight.x_max and wide.y_max >= tight.y_max


def test_scale_invariance_of_boxes():
    rng = np.random.default_rng(2)
    m = rng.standard_normal((20, 20))
    m[5:9, 5:9] += 3.0  # ensure positive max
    for scale in (2.5, 117.0):
        a = localize.cam_bbox(m)
        b = localize.cam_bbox(m * scale)
        assert a == b
        np.testing.assert_array_equal(
            localize.threshold_mask(m).mask, localize.threshold_mask(m * scale).mask
        )


# ---------------------------------------------------------------------------
# proposals
# ---------------------------------------------------------------------------


def blob_cam(cy, cx, size=32, sigma=4.0):
    yy, xx = np.mgrid[0:size, 0:size]
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))


def test_plain_mode_one_box_per_class():
    ranked = [(c, blob_cam(8 + 3 * c, 8 + 3 * c)) for c in (4, 1, 0, 3, 2)]
    got = localize.propose_boxes(ranked, mode="plain")
    assert [p.class_id for p in got] == [4, 1, 0, 3, 2]
    assert [p.class_rank for p in got] == [1, 2, 3, 4, 5]
    assert all(p.kind == "plain" for p in got)


def test_heuristic_mode_multiset_and_kinds():
    ranked = [(2, blob_cam(10, 10)), (0, blob_cam(20, 20)), (4, blob_cam(16, 8))]
    got = localize.propose_boxes(ranked, mode="heuristic")
    assert [p.class_id for p in got] == [2, 2, 0, 0, 4]
    assert [p.class_rank for p in got] == [1, 1, 2, 2, 3]
    assert [p.kind for p in got] == ["tight", "loose", "tight", "loose", "loose"]


def test_heuristic_tight_inside_loose():
    ranked = [(0, blob_cam(12, 18)), (1, blob_cam(20, 6)), (2, blob_cam(25, 25))]
    got = localize.propose_boxes(ranked, mode="heuristic")
    for tight, loose in ((got[0], got[1]), (got[2], got[3])):
        assert loose.box.x_min <= tight.box.x_min
        assert loose.box.y_min <= tight.box.y_min
        assert loose.box.x_max >= tight.box.x_max
        assert loose.box.y_max >= tight.box.y_max


def test_heuristic_needs_three_classes():
    ranked = [(0, blob_cam(8, 8)), (1, blob_cam(16, 16))]
    with pytest.raises(ValueError):
        localize.propose_boxes(ranked, mode="heuristic")


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        localize.propose_boxes([(0, blob_cam(8, 8))], mode="fancy")
