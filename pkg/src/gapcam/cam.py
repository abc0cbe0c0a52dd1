"""Class evidence maps: project a classifier row back onto the unit maps,
check the score decomposition, upsample to image resolution, and compute the
input-gradient saliency baseline.

The map for class c at mapping resolution is ``raw[y, x] = sum_k
W[c, k] * f_k[y, x]``. Because the average-pooled logit is ``S_c = sum_k
W[c, k] * mean(f_k)``, the spatial mean of ``raw`` reproduces ``S_c``
exactly; that identity is what ``verify_score_identity`` measures. No
normalization or clamping happens here; rendering and thresholding handle
that downstream, keeping the identity testable.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import gapnet as _gapnet
from . import nn


@dataclass(frozen=True)
class Cam:
    """One class's activation map at mapping resolution, optionally with its
    image-resolution upsampling."""

    class_id: int
    raw: np.ndarray
    upsampled: np.ndarray | None = None

    @property
    def max_val(self) -> float:
        return float(self.raw.max())

    @property
    def min_val(self) -> float:
        return float(self.raw.min())

    def with_upsampled(self, height: int, width: int) -> "Cam":
        return replace(self, upsampled=upsample_bilinear(self.raw, height, width))


def compute_cam(
    trace: _gapnet.ForwardTrace, class_weights: np.ndarray, class_id: int
) -> Cam:
    """Weighted sum of unit maps by one classifier row. Raw values, no
    normalization."""
    maps = trace.feature_maps
    if maps.ndim != 3:
        raise nn.ShapeError(f"expected unbatched (K, h, w) feature maps, got {maps.shape}")
    if not 0 <= class_id < class_weights.shape[0]:
        raise ValueError(f"class_id {class_id} out of range for {class_weights.shape[0]} classes")
    if class_weights.shape[1] != maps.shape[0]:
        raise nn.ShapeError(
            f"{maps.shape[0]} unit maps vs {class_weights.shape[1]} weight columns"
        )
    raw = np.tensordot(class_weights[class_id], maps, axes=1)
    return Cam(class_id=class_id, raw=raw)


def verify_score_identity(trace: _gapnet.ForwardTrace, cam: Cam) -> float:
    """Relative gap between the logit and the map's spatial mean:
    ``|S_c - mean(raw)| / max(1, |S_c|)``. Exact (up to rounding) for
    average-pooled heads."""
    s_c = float(trace.logits[cam.class_id])
    return abs(s_c - float(cam.raw.mean())) / max(1.0, abs(s_c))


def upsample_bilinear(raw: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers.

    Source coordinate for output x: ``sx = (x + 0.5) * w / W - 0.5``, clamped
    to [0, w-1]; same for rows. The output is a convex blend of input values,
    clipped to the input extrema to shed float fuzz.
    """
    raw = np.asarray(raw)
    if raw.ndim != 2 or raw.shape[0] < 1 or raw.shape[1] < 1:
        raise nn.ShapeError(f"expected a nonempty 2-d map, got shape {raw.shape}")
    h, w = raw.shape
    if height < h or width < w:
        raise ValueError(f"target {height}x{width} smaller than source {h}x{w}")

    sy = np.clip((np.arange(height) + 0.5) * h / height - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(width) + 0.5) * w / width - 0.5, 0.0, w - 1.0)
    y0 = np.clip(np.floor(sy).astype(int), 0, max(h - 2, 0))
    x0 = np.clip(np.floor(sx).astype(int), 0, max(w - 2, 0))
    ty = (sy - y0)[:, None]
    tx = (sx - x0)[None, :]
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)

    tl = raw[np.ix_(y0, x0)]
    tr = raw[np.ix_(y0, x1)]
    bl = raw[np.ix_(y1, x0)]
    br = raw[np.ix_(y1, x1)]
    out = (1 - ty) * ((1 - tx) * tl + tx * tr) + ty * ((1 - tx) * bl + tx * br)
    return np.clip(out, raw.min(), raw.max())


def saliency_backprop(net: _gapnet.GapNet, image: np.ndarray, class_id: int) -> np.ndarray:
    """Gradient of the raw logit for ``class_id`` with respect to the input
    image, reduced per pixel to the max absolute value over channels.

    One backward pass of the logit itself (not the softmax probability).
    A single (C, H, W) image yields an (H, W) map; a batch yields (N, H, W).
    """
    if not 0 <= class_id < net.config.classes:
        raise ValueError(f"class_id {class_id} out of range for {net.config.classes} classes")
    xb, single = nn._as_batch(np.asarray(image), 3)
    cache, maps = _gapnet._forward_stack(net, xb)
    pooled = _gapnet._pool_maps(maps, net.config.pooling)
    dlogits = np.zeros((xb.shape[0], net.config.classes), dtype=pooled.dtype)
    dlogits[:, class_id] = 1.0
    dpooled = nn.linear_backward(pooled, net.classifier_weights, dlogits).input_grad
    if net.config.pooling == "gap":
        dmaps = nn.gap_backward(maps, dpooled)
    else:
        dmaps = nn.gmp_backward(maps, dpooled)
    grads = _gapnet._backward_stack(net, cache, dmaps)
    sal = np.abs(grads["__input__"]).max(axis=1)
    return sal[0] if single else sal
