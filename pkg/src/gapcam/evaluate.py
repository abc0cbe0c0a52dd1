"""Localization metrics and the benchmark harness.

Error conventions follow the usual large-scale-challenge style: a sample
counts as localized at top-k if any proposed box whose source class sits in
the top k predictions carries the true label and overlaps the ground truth
with IoU >= 0.5 (inclusive). The gt-known accuracy sidesteps classification
entirely: box the map of the TRUE class and score the overlap. With
classification near ceiling on the synthetic data, gt-known is the number
that actually separates localizers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cam as _cam
from . import gapnet as _gapnet
from .localize import BBox, BoxProposal, gt_known_bbox, propose_boxes
from .synthdata import Sample


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union with inclusive pixel areas."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min) + 1
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min) + 1
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def loc_correct(
    proposals: list[BoxProposal], gt_label: int, gt_box: BBox, k: int
) -> bool:
    """True when some proposal from the top-k ranked classes names the true
    class and overlaps the truth at IoU >= 0.5."""
    if not proposals:
        raise ValueError("no proposals given")
    return any(
        p.class_rank <= k and p.class_id == gt_label and iou(p.box, gt_box) >= 0.5
        for p in proposals
    )


@dataclass
class SampleResult:
    """Everything measured for one test sample."""

    index: int
    label: int
    ranked_classes: tuple[int, ...]
    proposals: list[BoxProposal]
    gt_known_iou: float
    top1_cls: bool
    top5_cls: bool
    top1_loc: bool
    top5_loc: bool


@dataclass
class EvalReport:
    """Aggregate errors plus the per-sample records they came from."""

    top1_cls_err: float
    top5_cls_err: float
    top1_loc_err: float
    top5_loc_err: float
    gt_known_loc_acc: float
    records: list[SampleResult]

    def mean_gt_iou(self, class_id: int | None = None) -> float:
        """Mean gt-known IoU, optionally restricted to one class."""
        vals = [r.gt_known_iou for r in self.records if class_id in (None, r.label)]
        return float(np.mean(vals)) if vals else 0.0

    def as_rows(self) -> list[tuple[str, float]]:
        return [
            ("top1_cls_err", self.top1_cls_err),
            ("top5_cls_err", self.top5_cls_err),
            ("top1_loc_err", self.top1_loc_err),
            ("top5_loc_err", self.top5_loc_err),
            ("gt_known_loc_acc", self.gt_known_loc_acc),
        ]


def aggregate(records: list[SampleResult]) -> EvalReport:
    n = len(records)
    if n == 0:
        raise ValueError("no records to aggregate")
    return EvalReport(
        top1_cls_err=1.0 - sum(r.top1_cls for r in records) / n,
        top5_cls_err=1.0 - sum(r.top5_cls for r in records) / n,
        top1_loc_err=1.0 - sum(r.top1_loc for r in records) / n,
        top5_loc_err=1.0 - sum(r.top5_loc for r in records) / n,
        gt_known_loc_acc=sum(r.gt_known_iou >= 0.5 for r in records) / n,
        records=records,
    )


def score_sample(
    index: int,
    sample: Sample,
    ranked_classes: tuple[int, ...],
    proposals: list[BoxProposal],
    gt_known_iou: float,
) -> SampleResult:
    """Assemble one record from predictions, however they were produced."""
    top1 = ranked_classes[0] == sample.label
    top5 = sample.label in ranked_classes[:5]
    return SampleResult(
        index=index,
        label=sample.label,
        ranked_classes=ranked_classes,
        proposals=proposals,
        gt_known_iou=gt_known_iou,
        top1_cls=top1,
        top5_cls=top5,
        top1_loc=loc_correct(proposals, sample.label, sample.gt_box, 1),
        top5_loc=loc_correct(proposals, sample.label, sample.gt_box, 5),
    )


def _class_maps(
    net: _gapnet.GapNet, images: np.ndarray, traces: _gapnet.ForwardTrace, method: str
) -> np.ndarray:
    """Image-resolution evidence maps for every class of every image:
    shape (N, C, H, W)."""
    n = images.shape[0]
    h, w = net.config.input_hw
    classes = net.config.classes
    out = np.empty((n, classes, h, w), dtype=np.float64)
    if method == "cam":
        for i in range(n):
            raw_all = np.tensordot(net.classifier_weights, traces.feature_maps[i], axes=1)
            for c in range(classes):
                out[i, c] = _cam.upsample_bilinear(raw_all[c], h, w)
    elif method == "saliency":
        for c in range(classes):
            out[:, c] = _cam.saliency_backprop(net, images, c)
    else:
        raise ValueError(f"unknown localization method {method!r}")
    return out


def evaluate_net(
    net: _gapnet.GapNet,
    samples: list[Sample],
    method: str = "cam",
    mode: str = "plain",
    batch_size: int = 64,
) -> EvalReport:
    """Run the full pipeline (forward, per-class maps, boxes, metrics) over a
    sample list."""
    if not samples:
        raise ValueError("no samples to evaluate")
    records: list[SampleResult] = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        images = np.stack([s.image for s in chunk])
        traces = _gapnet.forward(net, images)
        maps = _class_maps(net, images, traces, method)
        for j, sample in enumerate(chunk):
            order = tuple(int(c) for c in np.argsort(-traces.probs[j], kind="stable"))
            ranked = [(c, maps[j, c]) for c in order]
            proposals = propose_boxes(ranked, mode=mode)
            gt_iou = iou(gt_known_bbox(maps[j, sample.label]), sample.gt_box)
            records.append(score_sample(start + j, sample, order, proposals, gt_iou))
    return aggregate(records)


def run_benchmark(
    nets: dict[str, _gapnet.GapNet],
    samples: list[Sample],
    methods: tuple[str, ...] = ("cam", "saliency"),
    mode: str = "plain",
) -> dict[tuple[str, str], EvalReport]:
    """Evaluate every (net, method) pair. ``nets`` must supply both a 'gap'
    and a 'gmp' checkpoint."""
    for required in ("gap", "gmp"):
        if required not in nets:
            raise ValueError(f"missing {required!r} checkpoint in nets")
    results: dict[tuple[str, str], EvalReport] = {}
    for name, net in nets.items():
        for method in methods:
            results[(name, method)] = evaluate_net(net, samples, method=method, mode=mode)
    return results


def random_box_accuracy(
    samples: list[Sample], seed: int = 0, box_side: int | None = None
) -> float:
    """Chance floor: one uniformly placed square box of the mean shape size
    per sample; fraction reaching IoU >= 0.5 against the truth."""
    if not samples:
        raise ValueError("no samples")
    h, w = samples[0].image.shape[1:]
    if box_side is None:
        box_side = round(0.425 * min(h, w))  # midpoint of the generator's scale range
    rng = np.random.default_rng(seed)
    hits = 0
    for sample in samples:
        x0 = int(rng.integers(0, w - box_side + 1))
        y0 = int(rng.integers(0, h - box_side + 1))
        box = BBox(x0, y0, x0 + box_side - 1, y0 + box_side - 1)
        hits += iou(box, sample.gt_box) >= 0.5
    return hits / len(samples)
