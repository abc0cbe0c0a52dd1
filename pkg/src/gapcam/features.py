"""Reusing a trained net's pooled features: linear hinge-loss probes over a
new label set, evidence maps from the probe's weights, and ranking the units
a classifier row leans on.

The probe deliberately has no bias term, matching the pooled-feature softmax
it stands in for: any weight row projected onto the unit maps then yields a
well-formed evidence map via the same machinery as the native classifier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cam as _cam
from . import gapnet as _gapnet
from . import nn
from .localize import BBox
from .synthdata import Sample


def extract_gap_features(net: _gapnet.GapNet, images: np.ndarray) -> np.ndarray:
    """Pooled unit activations for a stack of images, one row per image."""
    images = np.asarray(images)
    if images.ndim != 4:
        raise nn.ShapeError(f"expected (N, C, H, W) images, got {images.shape}")
    feats = []
    for start in range(0, len(images), 128):
        trace = _gapnet.forward(net, images[start : start + 128])
        feats.append(trace.pooled)
    return np.concatenate(feats, axis=0)


@dataclass
class LinearHead:
    """One-vs-rest linear classifier over pooled features, bias-free."""

    weights: np.ndarray  # (C', K)
    lam: float
    label_set: str = ""

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features @ self.weights.T).argmax(axis=-1)


def train_linear_head(
    features: np.ndarray,
    labels: np.ndarray,
    lam: float = 1e-3,
    epochs: int = 30,
    seed: int = 0,
    label_set: str = "",
) -> LinearHead:
    """L2-regularized one-vs-rest hinge loss by subgradient descent.

    Step sizes follow 1/(lam*t + 1), so the per-step shrink factor
    (1 - lr_t*lam) stays strictly inside (0, 1) for any lam > 0: huge
    regularization collapses the weights toward zero instead of oscillating.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise nn.ShapeError(
            f"features {features.shape} and labels {labels.shape} do not line up"
        )
    classes = np.unique(labels)
    n_classes = int(classes.max()) + 1
    if classes.size < 2:
        raise ValueError("need at least two distinct labels")
    if lam <= 0:
        raise ValueError(f"lam must be positive, got {lam}")
    n, k = features.shape
    # signed targets: +1 for the sample's class, -1 elsewhere
    signs = -np.ones((n, n_classes))
    signs[np.arange(n), labels] = 1.0
    weights = np.zeros((n_classes, k))
    rng = np.random.default_rng(seed)
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            lr = 1.0 / (lam * t + 1.0)
            x = features[i]
            margins = signs[i] * (weights @ x)
            weights *= 1.0 - lr * lam
            violating = margins < 1.0
            if violating.any():
                weights[violating] += lr * np.outer(signs[i, violating], x)
    return LinearHead(weights=weights, lam=lam, label_set=label_set)


def cam_from_head(trace: _gapnet.ForwardTrace, head: LinearHead, class_id: int) -> _cam.Cam:
    """Evidence map for a probe class: same projection as the native
    classifier, using the probe's weight row."""
    return _cam.compute_cam(trace, head.weights, class_id)


# ---------------------------------------------------------------------------
# receptive fields and unit ranking
# ---------------------------------------------------------------------------


def receptive_field(config: _gapnet.GapNetConfig) -> tuple[int, int, float]:
    """(size, stride, center0) of one head-conv output cell in input pixels.

    Walks the layer geometry: each layer with kernel k, stride s, pad p maps
    size -> size + (k-1)*jump, jump -> jump*s, and shifts the first cell's
    center by ((k-1)/2 - p)*jump.
    """
    size, jump, center = 1, 1, 0.0
    for spec in tuple(config.backbone) + (("conv", config.units),):
        if spec[0] == "conv":
            k, s, p = 3, 1, 1
        elif spec[0] == "pool":
            k, s, p = 2, 2, 0
        else:
            continue
        size = size + (k - 1) * jump
        center = center + ((k - 1) / 2 - p) * jump
        jump = jump * s
    return size, jump, center


def rf_box(config: _gapnet.GapNetConfig, y: int, x: int) -> BBox:
    """Input-pixel box seen by head-conv cell (y, x), clipped to the image."""
    size, jump, center0 = receptive_field(config)
    h, w = config.input_hw
    cy = center0 + y * jump
    cx = center0 + x * jump
    half = (size - 1) / 2
    return BBox(
        x_min=max(0, round(cx - half)),
        y_min=max(0, round(cy - half)),
        x_max=min(w - 1, round(cx + half)),
        y_max=min(h - 1, round(cy + half)),
    )


@dataclass
class UnitPatch:
    """One high-activation crop for a unit."""

    sample_index: int
    activation: float
    box: BBox
    patch: np.ndarray  # (H_crop, W_crop) grayscale


@dataclass
class RankedUnit:
    unit_id: int
    weight: float
    patches: list[UnitPatch] = field(default_factory=list)


@dataclass
class UnitRanking:
    """Units ordered by how much a classifier row relies on them, with the
    image regions that drive the top units hardest."""

    class_id: int
    unit_order: np.ndarray  # permutation of 0..K-1, descending weight
    sorted_weights: np.ndarray
    top_units: list[RankedUnit]


def rank_units(
    net: _gapnet.GapNet,
    class_id: int,
    samples: list[Sample],
    head: LinearHead | None = None,
    top_units: int = 3,
    top_images: int = 5,
) -> UnitRanking:
    """Sort units by descending weight for ``class_id`` (ties keep unit-id
    order); for each leading unit, crop the receptive field at the unit map's
    argmax in its ``top_images`` strongest images."""
    weights = head.weights if head is not None else net.classifier_weights
    if not 0 <= class_id < weights.shape[0]:
        raise ValueError(f"class_id {class_id} out of range for {weights.shape[0]} classes")
    row = np.asarray(weights[class_id], dtype=np.float64)
    order = np.argsort(-row, kind="stable")

    images = np.stack([s.image for s in samples])
    pooled = []
    maps = []
    for start in range(0, len(images), 128):
        trace = _gapnet.forward(net, images[start : start + 128])
        pooled.append(trace.pooled)
        maps.append(trace.feature_maps)
    pooled_all = np.concatenate(pooled, axis=0)  # (N, K)
    maps_all = np.concatenate(maps, axis=0)  # (N, K, h, w)

    ranked: list[RankedUnit] = []
    for unit_id in order[:top_units]:
        unit_id = int(unit_id)
        strengths = pooled_all[:, unit_id]
        best = np.argsort(-strengths, kind="stable")[:top_images]
        entries = []
        for idx in best:
            umap = maps_all[idx, unit_id]
            ay, ax = np.unravel_index(int(umap.argmax()), umap.shape)
            box = rf_box(net.config, int(ay), int(ax))
            crop = samples[int(idx)].image[0, box.y_min : box.y_max + 1, box.x_min : box.x_max + 1]
            entries.append(
                UnitPatch(
                    sample_index=int(idx),
                    activation=float(strengths[idx]),
                    box=box,
                    patch=crop.copy(),
                )
            )
        ranked.append(RankedUnit(unit_id=unit_id, weight=float(row[unit_id]), patches=entries))
    return UnitRanking(
        class_id=class_id,
        unit_order=order,
        sorted_weights=row[order],
        top_units=ranked,
    )
