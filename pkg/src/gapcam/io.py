"""File formats: binary tensors and checkpoints, dataset bundles, box and
report CSVs, and heatmap-overlay PNG rendering.

Wire format is little-endian everywhere, no negotiation. A tensor record is::

    bytes 0..3   magic  b"CAMT"
    byte  4      format version, currently 1
    byte  5      dtype code: 1 = float32, 2 = float64
    byte  6      ndim
    byte  7      reserved, must be 0
    next 8*ndim  dims, u64 each
    rest         row-major payload

Checkpoints and dataset files are bundles: a u32 length-prefixed UTF-8 header
string, a u32 entry count, then (u16 name length, name, tensor record) per
entry. Parse failures raise :class:`TensorFormatError` naming the byte offset.
"""

from __future__ import annotations

import csv
import math
import struct
from io import BytesIO
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from . import gapnet, synthdata
from ._colormap import JET_LUT
from .localize import BBox

MAGIC = b"CAMT"
VERSION = 1
BOX_CSV_FIELDS = ("image_id", "class_id", "x_min", "y_min", "x_max", "y_max", "score")

_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


class TensorFormatError(ValueError):
    """A tensor or bundle file failed to parse. Messages name byte offsets."""


# ---------------------------------------------------------------------------
# tensor records


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    """Serialize a float32/float64 array. Other dtypes are rejected, not cast."""
    arr = np.asarray(arr)
    code = _CODES.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise ValueError(f"only float32/float64 tensors are supported, got {arr.dtype}")
    if arr.ndim > 255:
        raise ValueError(f"ndim {arr.ndim} exceeds the format limit of 255")
    header = MAGIC + bytes((VERSION, code, arr.ndim, 0))
    dims = b"".join(struct.pack("<Q", d) for d in arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    return header + dims + payload


def _need(data: bytes, offset: int, n: int, what: str) -> None:
    if len(data) - offset < n:
        raise TensorFormatError(
            f"truncated: need {n} byte(s) for {what} at byte {offset},"
            f" only {len(data) - offset} remain"
        )


def tensor_from_bytes(data: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one tensor record starting at ``offset``.

    Returns the array and the offset one past its payload, so records can be
    read back-to-back out of a bundle.
    """
    _need(data, offset, 8, "tensor header")
    if data[offset : offset + 4] != MAGIC:
        raise TensorFormatError(
            f"bad magic {data[offset:offset + 4]!r} at byte {offset}, expected {MAGIC!r}"
        )
    version, code, ndim, reserved = data[offset + 4 : offset + 8]
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version} at byte {offset + 4}")
    if code not in _DTYPES:
        raise TensorFormatError(f"unsupported dtype code {code} at byte {offset + 5}")
    if reserved != 0:
        raise TensorFormatError(f"reserved byte at {offset + 7} must be 0, found {reserved}")
    dims_off = offset + 8
    _need(data, dims_off, 8 * ndim, f"{ndim} dimension(s)")
    dims = struct.unpack_from(f"<{ndim}Q", data, dims_off)
    dtype = _DTYPES[code]
    count = math.prod(dims)
    payload_off = dims_off + 8 * ndim
    _need(data, payload_off, count * dtype.itemsize, "tensor payload")
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=payload_off)
    return arr.reshape(dims).copy(), payload_off + count * dtype.itemsize


def save_tensor(arr: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(tensor_to_bytes(arr))


def load_tensor(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    arr, end = tensor_from_bytes(data)
    if end != len(data):
        raise TensorFormatError(f"{len(data) - end} trailing byte(s) at byte {end}")
    return arr


# ---------------------------------------------------------------------------
# bundles: header text + named tensor entries


def bundle_to_bytes(header: str, entries: Sequence[tuple[str, np.ndarray]]) -> bytes:
    names = [name for name, _ in entries]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate entry names: {sorted(names)}")
    header_b = header.encode("utf-8")
    out = [struct.pack("<I", len(header_b)), header_b, struct.pack("<I", len(entries))]
    for name, arr in entries:
        name_b = name.encode("utf-8")
        out.append(struct.pack("<H", len(name_b)))
        out.append(name_b)
        out.append(tensor_to_bytes(arr))
    return b"".join(out)


def bundle_from_bytes(data: bytes) -> tuple[str, dict[str, np.ndarray]]:
    _need(data, 0, 4, "header length")
    (header_len,) = struct.unpack_from("<I", data, 0)
    _need(data, 4, header_len, "header text")
    header = data[4 : 4 + header_len].decode("utf-8")
    off = 4 + header_len
    _need(data, off, 4, "entry count")
    (n_entries,) = struct.unpack_from("<I", data, off)
    off += 4
    entries: dict[str, np.ndarray] = {}
    for _ in range(n_entries):
        _need(data, off, 2, "entry name length")
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        _need(data, off, name_len, "entry name")
        name = data[off : off + name_len].decode("utf-8")
        if name in entries:
            raise TensorFormatError(f"duplicate entry {name!r} at byte {off}")
        off += name_len
        entries[name], off = tensor_from_bytes(data, off)
    if off != len(data):
        raise TensorFormatError(f"{len(data) - off} trailing byte(s) at byte {off}")
    return header, entries


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_to_bytes(net: gapnet.GapNet) -> bytes:
    return bundle_to_bytes(gapnet.describe_config(net.config), list(net.params.items()))


def checkpoint_from_bytes(data: bytes) -> gapnet.GapNet:
    header, entries = bundle_from_bytes(data)
    config = gapnet.parse_config(header)
    # A freshly built net defines the required parameter names and shapes.
    template = gapnet.build_gapnet(config, seed=0)
    missing = sorted(set(template.params) - set(entries))
    extra = sorted(set(entries) - set(template.params))
    if missing or extra:
        raise TensorFormatError(
            f"parameter set mismatch: missing {missing}, unexpected {extra}"
        )
    for name, ref in template.params.items():
        if entries[name].shape != ref.shape:
            raise TensorFormatError(
                f"parameter {name!r} has shape {entries[name].shape},"
                f" expected {ref.shape}"
            )
    params = {name: entries[name] for name in template.params}
    return gapnet.GapNet(config=config, mapping_hw=template.mapping_hw, params=params)


def save_checkpoint(net: gapnet.GapNet, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_to_bytes(net))


def load_checkpoint(path: str | Path) -> gapnet.GapNet:
    return checkpoint_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# dataset bundles

_SPLIT_VERSION = "synthsplit/1"


def save_dataset(dataset: synthdata.Dataset, path: str | Path) -> None:
    """Write images, labels, ground-truth boxes, and the train/test split.

    Placement metadata is not persisted; a loaded dataset carries only what
    training and evaluation need. Integer fields ride in float64 tensors
    (exact for any realistic index) because the tensor format is float-only.
    """
    samples = dataset.samples
    images = np.stack([s.image for s in samples]).astype(np.float32)
    labels = np.array([s.label for s in samples], dtype=np.float64)
    boxes = np.array(
        [(s.gt_box.x_min, s.gt_box.y_min, s.gt_box.x_max, s.gt_box.y_max) for s in samples],
        dtype=np.float64,
    )
    header = f"{_SPLIT_VERSION}\nseed={dataset.seed}\n"
    entries = [
        ("images", images),
        ("labels", labels),
        ("boxes", boxes),
        ("train_indices", np.asarray(dataset.train_indices, dtype=np.float64)),
        ("test_indices", np.asarray(dataset.test_indices, dtype=np.float64)),
    ]
    Path(path).write_bytes(bundle_to_bytes(header, entries))


def load_dataset(path: str | Path) -> synthdata.Dataset:
    header, entries = bundle_from_bytes(Path(path).read_bytes())
    lines = header.strip().split("\n")
    if not lines or lines[0] != _SPLIT_VERSION:
        raise TensorFormatError(f"unsupported dataset header: {lines[0] if lines else '<empty>'}")
    kv = dict(ln.split("=", 1) for ln in lines[1:] if "=" in ln)
    required = {"images", "labels", "boxes", "train_indices", "test_indices"}
    missing = sorted(required - set(entries))
    if missing:
        raise TensorFormatError(f"dataset bundle missing entries: {missing}")
    images = entries["images"].astype(np.float32)
    if images.ndim != 4:
        raise TensorFormatError(f"images entry must be 4-d, got shape {images.shape}")
    n, _, h, w = images.shape
    if entries["labels"].shape != (n,) or entries["boxes"].shape != (n, 4):
        raise TensorFormatError(
            f"labels/boxes shapes {entries['labels'].shape}/{entries['boxes'].shape}"
            f" do not match {n} images"
        )
    samples = []
    for i in range(n):
        x0, y0, x1, y1 = (int(v) for v in entries["boxes"][i])
        samples.append(
            synthdata.Sample(
                image=images[i],
                label=int(entries["labels"][i]),
                gt_box=BBox(x0, y0, x1, y1),
                meta={"source": str(path)},
            )
        )
    return synthdata.Dataset(
        samples=samples,
        train_indices=entries["train_indices"].astype(np.int64),
        test_indices=entries["test_indices"].astype(np.int64),
        config=synthdata.SynthConfig(image_hw=(h, w)),
        seed=int(kv.get("seed", "0")),
    )


# ---------------------------------------------------------------------------
# linear probe heads

_HEAD_VERSION = "linearhead/1"


def save_linear_head(head, path: str | Path) -> None:
    header = f"{_HEAD_VERSION}\nlam={head.lam!r}\nlabel_set={head.label_set}\n"
    Path(path).write_bytes(bundle_to_bytes(header, [("weights", head.weights)]))


def load_linear_head(path: str | Path):
    from . import features  # deferred: features has no dependency back on this module

    header, entries = bundle_from_bytes(Path(path).read_bytes())
    lines = header.strip().split("\n")
    if not lines or lines[0] != _HEAD_VERSION:
        raise TensorFormatError(f"unsupported head header: {lines[0] if lines else '<empty>'}")
    kv = dict(ln.split("=", 1) for ln in lines[1:] if "=" in ln)
    if "weights" not in entries or entries["weights"].ndim != 2:
        raise TensorFormatError("head bundle must carry a 2-d 'weights' entry")
    return features.LinearHead(
        weights=entries["weights"],
        lam=float(kv.get("lam", "0")),
        label_set=kv.get("label_set", ""),
    )


# ---------------------------------------------------------------------------
# CSVs


def write_boxes_csv(
    rows: Iterable[tuple[int, int, BBox, float]], path: str | Path
) -> None:
    """Rows are (image_id, class_id, box, score); the header row is fixed."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BOX_CSV_FIELDS)
        for image_id, class_id, box, score in rows:
            writer.writerow(
                [image_id, class_id, box.x_min, box.y_min, box.x_max, box.y_max, float(score)]
            )


def read_boxes_csv(path: str | Path) -> list[tuple[int, int, BBox, float]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(BOX_CSV_FIELDS):
            raise ValueError(f"unexpected box CSV header: {header}")
        rows = []
        for rec in reader:
            image_id, class_id, x0, y0, x1, y1, score = rec
            rows.append(
                (
                    int(image_id),
                    int(class_id),
                    BBox(int(x0), int(y0), int(x1), int(y1)),
                    float(score),
                )
            )
    return rows


def write_report_csv(report, path: str | Path) -> None:
    """metric,value rows in the report's own order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "value"])
        for name, value in report.as_rows():
            writer.writerow([name, float(value)])


# ---------------------------------------------------------------------------
# rendering


def render_overlay(
    image: np.ndarray,
    cam_upsampled: np.ndarray,
    path: str | Path | None = None,
    alpha: float = 0.5,
) -> bytes:
    """Blend a min-max-normalized heatmap over a grayscale image; return PNG bytes.

    A constant map normalizes to 0.5 everywhere (uniform mid-colormap tint)
    instead of dividing by zero. ``alpha=0`` reproduces the input image
    exactly, up to PNG encoding.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3 and image.shape[0] == 1:
        image = image[0]
    cam = np.asarray(cam_upsampled, dtype=np.float64)
    if image.ndim != 2 or cam.shape != image.shape:
        raise ValueError(f"image {image.shape} and map {cam.shape} must be matching 2-d grids")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")

    lo, hi = cam.min(), cam.max()
    norm = np.full_like(cam, 0.5) if hi <= lo else (cam - lo) / (hi - lo)
    heat = JET_LUT[np.clip(np.rint(norm * 255), 0, 255).astype(np.intp)].astype(np.float64)
    gray = np.rint(np.clip(image, 0.0, 1.0) * 255.0)[..., None]
    blended = np.rint((1.0 - alpha) * gray + alpha * heat).astype(np.uint8)

    buf = BytesIO()
    Image.fromarray(blended, mode="RGB").save(buf, format="PNG")
    data = buf.getvalue()
    if path is not None:
        Path(path).write_bytes(data)
    return data


def render_unit_sheet(
    patch_grid: Sequence[Sequence[np.ndarray]],
    path: str | Path | None = None,
    upscale: int = 4,
    pad: int = 2,
) -> bytes:
    """Grayscale contact sheet: one row per unit, one cell per example patch.

    Patches near image borders come in clipped, so every cell is padded to
    the largest patch size before upscaling with nearest-neighbor blocks.
    """
    if not patch_grid or not any(len(row) for row in patch_grid):
        raise ValueError("no patches to render")
    cell_h = max(p.shape[0] for row in patch_grid for p in row)
    cell_w = max(p.shape[1] for row in patch_grid for p in row)
    n_cols = max(len(row) for row in patch_grid)
    sheet_h = pad + len(patch_grid) * (cell_h * upscale + pad)
    sheet_w = pad + n_cols * (cell_w * upscale + pad)
    sheet = np.full((sheet_h, sheet_w), 32, dtype=np.uint8)
    for r, row in enumerate(patch_grid):
        for c, patch in enumerate(row):
            cell = np.zeros((cell_h, cell_w))
            cell[: patch.shape[0], : patch.shape[1]] = np.clip(patch, 0.0, 1.0)
            block = np.kron(cell, np.ones((upscale, upscale)))
            y = pad + r * (cell_h * upscale + pad)
            x = pad + c * (cell_w * upscale + pad)
            sheet[y : y + block.shape[0], x : x + block.shape[1]] = np.rint(block * 255)
    buf = BytesIO()
    Image.fromarray(sheet, mode="L").save(buf, format="PNG")
    data = buf.getvalue()
    if path is not None:
        Path(path).write_bytes(data)
    return data
