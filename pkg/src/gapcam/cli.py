"""Command-line front end for the whole pipeline.

Subcommands: ``synth`` (dataset generation), ``train``, ``gradcheck``,
``cam`` (single-image map rendering), ``localize`` (box CSV for one image),
``eval`` (test-split metrics), ``features`` (linear probe on frozen pooled
features), and ``units`` (per-class unit ranking contact sheet). Every
source of randomness is seeded through an explicit ``--seed`` flag, so any
two runs with identical arguments produce byte-identical artifacts.

``main`` returns the process exit code: 0 on success, 1 with a one-line
``error:`` diagnostic on stderr for runtime failures. Unknown flags or
subcommands exit 2 with usage text, courtesy of argparse.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import cam as _cam
from . import evaluate as _evaluate
from . import features as _features
from . import gapnet as _gapnet
from . import io as _io
from . import localize as _localize
from . import nn as _nn
from . import synthdata as _synthdata

GRADCHECK_TOL = 1e-5
DATASET_FILENAME = "dataset.synth"


def _dataset_path(arg: str) -> Path:
    p = Path(arg)
    return p / DATASET_FILENAME if p.is_dir() else p


def _load_image_tensor(path: str) -> np.ndarray:
    """Read a single image from a tensor record as (C, H, W)."""
    arr = _io.load_tensor(path)
    if arr.ndim == 2:
        arr = arr[None]
    elif arr.ndim == 4 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 3:
        raise ValueError(f"image tensor must be (H, W) or (C, H, W), got shape {arr.shape}")
    return arr.astype(np.float32)


def _ranked_cams(net: _gapnet.GapNet, image: np.ndarray, top_k: int = 5):
    """Forward one image; return its trace and the top-k (class, upsampled map) list."""
    trace = _gapnet.forward(net, image)
    order = np.argsort(-trace.probs, kind="stable")[:top_k]
    h, w = image.shape[1:]
    ranked = []
    for class_id in order:
        raw = _cam.compute_cam(trace, net.classifier_weights, int(class_id)).raw
        ranked.append((int(class_id), _cam.upsample_bilinear(raw, h, w)))
    return trace, ranked


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(args: argparse.Namespace) -> int:
    dataset = _synthdata.generate_dataset(args.per_class, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / DATASET_FILENAME
    _io.save_dataset(dataset, path)
    print(
        f"wrote {path}: {len(dataset.samples)} samples"
        f" ({len(dataset.train_indices)} train / {len(dataset.test_indices)} test),"
        f" seed {args.seed}"
    )
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    dataset = _io.load_dataset(_dataset_path(args.data))
    images, labels = dataset.train_arrays
    _, channels, height, width = images.shape
    config = _gapnet.GapNetConfig(
        input_hw=(height, width),
        in_channels=channels,
        classes=int(labels.max()) + 1,
        pooling=args.head,
    )
    net = _gapnet.build_gapnet(config, seed=args.seed)
    net, stats = _gapnet.train(
        net, images, labels, epochs=args.epochs, seed=args.seed, lr=args.lr
    )
    for s in stats:
        print(f"epoch {s.epoch:3d}  loss {s.loss:.4f}  acc {s.accuracy:.4f}  lr {s.lr:g}")
    if len(dataset.test_indices):
        test_images, test_labels = dataset.test_arrays
        preds = []
        for start in range(0, len(test_images), 64):
            trace = _gapnet.forward(net, test_images[start : start + 64])
            preds.append(np.argmax(trace.probs, axis=1))
        acc = float(np.mean(np.concatenate(preds) == test_labels))
        print(f"held-out accuracy {acc:.4f}")
    _io.save_checkpoint(net, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    report = _nn.gradcheck_report(seed=args.seed, instances=args.instances)
    failed = False
    for name, err in report.items():
        ok = err < GRADCHECK_TOL
        failed |= not ok
        print(f"{name:<20} max rel err {err:.3e}  {'ok' if ok else 'FAIL'}")
    return 1 if failed else 0


def _cmd_cam(args: argparse.Namespace) -> int:
    net = _io.load_checkpoint(args.ckpt)
    image = _load_image_tensor(args.image)
    trace = _gapnet.forward(net, image)
    class_id = args.class_id if args.class_id is not None else int(np.argmax(trace.probs))
    cam = _cam.compute_cam(trace, net.classifier_weights, class_id)
    h, w = image.shape[1:]
    upsampled = _cam.upsample_bilinear(cam.raw, h, w)
    if args.out_tensor:
        _io.save_tensor(upsampled.astype(np.float64), args.out_tensor)
    if args.out_png:
        _io.render_overlay(image, upsampled, path=args.out_png, alpha=args.alpha)
    print(
        f"class {class_id}  prob {float(trace.probs[class_id]):.4f}"
        f"  map {cam.raw.shape[0]}x{cam.raw.shape[1]}  peak {float(upsampled.max()):.4f}"
    )
    return 0


def _cmd_localize(args: argparse.Namespace) -> int:
    net = _io.load_checkpoint(args.ckpt)
    image = _load_image_tensor(args.image)
    trace, ranked = _ranked_cams(net, image)
    proposals = _localize.propose_boxes(ranked, mode=args.mode)
    rows = [
        (0, p.class_id, p.box, float(trace.probs[p.class_id])) for p in proposals
    ]
    _io.write_boxes_csv(rows, args.out_csv)
    print(f"wrote {len(rows)} {args.mode} boxes to {args.out_csv}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    net = _io.load_checkpoint(args.ckpt)
    dataset = _io.load_dataset(_dataset_path(args.data))
    samples = dataset.test_samples()
    report = _evaluate.evaluate_net(net, samples, method=args.method, mode=args.mode)
    for name, value in report.as_rows():
        print(f"{name:<18} {value:.4f}")
    if args.report:
        _io.write_report_csv(report, args.report)
        print(f"wrote {args.report}")
    return 0


def _parse_relabel(spec: str, n_classes: int) -> dict[int, int]:
    mapping: dict[int, int] = {}
    try:
        for part in spec.split(","):
            old, new = part.split(":")
            mapping[int(old)] = int(new)
    except ValueError:
        raise ValueError(f"relabel spec must look like '0:0,1:1,...', got {spec!r}") from None
    missing = [c for c in range(n_classes) if c not in mapping]
    if missing:
        raise ValueError(f"relabel spec leaves classes {missing} unmapped")
    return mapping


def _cmd_features(args: argparse.Namespace) -> int:
    net = _io.load_checkpoint(args.ckpt)
    dataset = _io.load_dataset(_dataset_path(args.data))
    mapping = _parse_relabel(args.relabel, net.config.classes)

    train_images, train_labels = dataset.train_arrays
    feats = _features.extract_gap_features(net, train_images)
    mapped = np.array([mapping[int(v)] for v in train_labels])
    head = _features.train_linear_head(
        feats, mapped, lam=args.lam, epochs=args.epochs, seed=args.seed, label_set=args.relabel
    )
    train_acc = float(np.mean(head.predict(feats) == mapped))
    print(f"probe train accuracy {train_acc:.4f}")
    if len(dataset.test_indices):
        test_images, test_labels = dataset.test_arrays
        test_feats = _features.extract_gap_features(net, test_images)
        test_mapped = np.array([mapping[int(v)] for v in test_labels])
        acc = float(np.mean(head.predict(test_feats) == test_mapped))
        print(f"probe held-out accuracy {acc:.4f}")
    _io.save_linear_head(head, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_units(args: argparse.Namespace) -> int:
    net = _io.load_checkpoint(args.ckpt)
    dataset = _io.load_dataset(_dataset_path(args.data))
    ranking = _features.rank_units(
        net,
        args.class_id,
        dataset.samples,
        top_units=args.top_units,
        top_images=args.top_images,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    png_path = out_dir / f"units_class{args.class_id}.png"
    csv_path = out_dir / f"units_class{args.class_id}.csv"
    grid = [[p.patch for p in unit.patches] for unit in ranking.top_units]
    _io.render_unit_sheet(grid, path=png_path)
    with open(csv_path, "w") as fh:
        fh.write("unit_id,weight\n")
        for unit_id, weight in zip(ranking.unit_order, ranking.sorted_weights):
            fh.write(f"{int(unit_id)},{float(weight)}\n")
    for unit in ranking.top_units:
        print(f"unit {unit.unit_id}  weight {unit.weight:.4f}  patches {len(unit.patches)}")
    print(f"wrote {png_path} and {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gapcam",
        description="Train small average-pooled CNNs and localize objects from their class activation maps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic shape dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a classifier on a dataset bundle")
    p.add_argument("--data", required=True, help="dataset bundle or its directory")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--head", choices=("gap", "gmp"), default="gap")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int, default=15)
    # max-pool heads want a gentler step; see the training-rate note in README
    p.add_argument("--lr", type=float, default=0.05)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("gradcheck", help="numeric-vs-analytic gradient audit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("cam", help="render one class activation map")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True, help="image tensor record")
    p.add_argument("--class", dest="class_id", type=int, default=None,
                   help="class to map (default: predicted top-1)")
    p.add_argument("--out-png", default=None)
    p.add_argument("--out-tensor", default=None)
    p.add_argument("--alpha", type=float, default=0.5)
    p.set_defaults(func=_cmd_cam)

    p = sub.add_parser("localize", help="propose boxes for one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True, help="image tensor record")
    p.add_argument("--mode", choices=("plain", "heuristic"), default="plain")
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=_cmd_localize)

    p = sub.add_parser("eval", help="classification and localization metrics on the test split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=("cam", "saliency"), default="cam")
    p.add_argument("--mode", choices=("plain", "heuristic"), default="plain")
    p.add_argument("--report", default=None, help="metrics CSV output path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("features", help="linear hinge probe on frozen pooled features")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--relabel", required=True, help="class map like '0:0,1:1,2:2,3:0,4:0'")
    p.add_argument("--out", required=True, help="probe head output path")
    p.add_argument("--lam", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("units", help="rank units for a class and render their patches")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--class", dest="class_id", type=int, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--top-units", type=int, default=3)
    p.add_argument("--top-images", type=int, default=5)
    p.set_defaults(func=_cmd_units)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
