"""File-format tests: golden bytes, round trips, parse errors, PNG rendering."""

from io import BytesIO

import numpy as np
import pytest
from PIL import Image

from gapcam import evaluate, gapnet, io as gio, synthdata
from gapcam._colormap import JET_LUT
from gapcam.localize import BBox

# ---------------------------------------------------------------------------
# tensor records


def test_tensor_golden_bytes_f32():
    # Hand-assembled record for [[1.0, 2.0]] float32: magic, version 1,
    # dtype 1, ndim 2, reserved 0, dims 1 and 2 as u64, then IEEE payload.
    arr = np.array([[1.0, 2.0]], dtype=np.float32)
    expected = bytes.fromhex(
        "43414d5401010200"
        "0100000000000000"
        "0200000000000000"
        "0000803f00000040"
    )
    assert gio.tensor_to_bytes(arr) == expected


def test_tensor_golden_bytes_f64_scalar():
    arr = np.array(1.0, dtype=np.float64)
    expected = bytes.fromhex("43414d5401020000" + "000000000000f03f")
    assert gio.tensor_to_bytes(arr) == expected


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape", [(), (7,), (3, 4), (2, 3, 4, 5)])
def test_tensor_round_trip_bit_exact(tmp_path, dtype, shape):
    rng = np.random.default_rng(3)
    arr = rng.standard_normal(shape).astype(dtype)
    path = tmp_path / "t.camt"
    gio.save_tensor(arr, path)
    back = gio.load_tensor(path)
    assert back.dtype == arr.dtype
    assert back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_tensor_from_bytes_at_offset():
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    blob = b"xyz" + gio.tensor_to_bytes(arr)
    back, end = gio.tensor_from_bytes(blob, offset=3)
    assert end == len(blob)
    np.testing.assert_array_equal(back, arr)


def test_tensor_rejects_integer_arrays():
    with pytest.raises(ValueError, match="float32/float64"):
        gio.tensor_to_bytes(np.arange(4))


def test_bad_magic_names_byte_zero():
    data = b"NOPE" + gio.tensor_to_bytes(np.zeros(2, dtype=np.float32))[4:]
    with pytest.raises(gio.TensorFormatError, match=r"magic.*byte 0"):
        gio.tensor_from_bytes(data)


def test_bad_version_names_byte_four():
    data = bytearray(gio.tensor_to_bytes(np.zeros(2, dtype=np.float32)))
    data[4] = 9
    with pytest.raises(gio.TensorFormatError, match=r"version 9 at byte 4"):
        gio.tensor_from_bytes(bytes(data))


def test_dtype_code_seven_rejected():
    data = bytearray(gio.tensor_to_bytes(np.zeros(2, dtype=np.float32)))
    data[5] = 7
    with pytest.raises(gio.TensorFormatError, match=r"dtype code 7 at byte 5"):
        gio.tensor_from_bytes(bytes(data))


def test_truncation_names_exact_offset():
    # Record for shape (1, 2) f32: payload starts at byte 24, needs 8 bytes.
    full = gio.tensor_to_bytes(np.array([[1.0, 2.0]], dtype=np.float32))
    with pytest.raises(gio.TensorFormatError, match=r"payload at byte 24, only 7 remain"):
        gio.tensor_from_bytes(full[:-1])


def test_header_truncation_rejected():
    with pytest.raises(gio.TensorFormatError, match=r"header at byte 0"):
        gio.tensor_from_bytes(b"CAMT\x01")


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "t.camt"
    path.write_bytes(gio.tensor_to_bytes(np.zeros(3, dtype=np.float64)) + b"\x00")
    with pytest.raises(gio.TensorFormatError, match="trailing"):
        gio.load_tensor(path)


def test_reserved_byte_must_be_zero():
    data = bytearray(gio.tensor_to_bytes(np.zeros(2, dtype=np.float32)))
    data[7] = 1
    with pytest.raises(gio.TensorFormatError, match=r"reserved byte at 7"):
        gio.tensor_from_bytes(bytes(data))


# ---------------------------------------------------------------------------
# bundles and checkpoints


def test_bundle_round_trip():
    entries = [
        ("alpha", np.arange(4, dtype=np.float32).reshape(2, 2)),
        ("beta", np.linspace(0, 1, 5)),
    ]
    blob = gio.bundle_to_bytes("demo/1\nkey=3\n", entries)
    header, back = gio.bundle_from_bytes(blob)
    assert header == "demo/1\nkey=3\n"
    assert list(back) == ["alpha", "beta"]
    for name, arr in entries:
        assert back[name].tobytes() == arr.tobytes()
        assert back[name].dtype == arr.dtype


def test_bundle_duplicate_names_rejected():
    entries = [("w", np.zeros(1)), ("w", np.ones(1))]
    with pytest.raises(ValueError, match="duplicate"):
        gio.bundle_to_bytes("h", entries)


def _tiny_net():
    config = gapnet.GapNetConfig(
        input_hw=(16, 16),
        backbone=(("conv", 4), ("relu",), ("pool",)),
        units=6,
        classes=3,
    )
    return gapnet.build_gapnet(config, seed=2)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    net = _tiny_net()
    path = tmp_path / "net.ckpt"
    gio.save_checkpoint(net, path)
    back = gio.load_checkpoint(path)
    assert back.config == net.config
    assert back.mapping_hw == net.mapping_hw
    assert set(back.params) == set(net.params)
    for name in net.params:
        assert back.params[name].tobytes() == net.params[name].tobytes()

    x = np.random.default_rng(0).random((2, 1, 16, 16), dtype=np.float32)
    np.testing.assert_array_equal(
        gapnet.forward(back, x).logits, gapnet.forward(net, x).logits
    )


def test_checkpoint_missing_parameter_rejected():
    net = _tiny_net()
    entries = [(n, a) for n, a in net.params.items() if n != "head.bias"]
    blob = gio.bundle_to_bytes(gapnet.describe_config(net.config), entries)
    with pytest.raises(gio.TensorFormatError, match=r"missing \['head.bias'\]"):
        gio.checkpoint_from_bytes(blob)


def test_checkpoint_wrong_shape_rejected():
    net = _tiny_net()
    entries = [
        (n, np.zeros((2, 2), dtype=np.float32) if n == "classifier.weights" else a)
        for n, a in net.params.items()
    ]
    blob = gio.bundle_to_bytes(gapnet.describe_config(net.config), entries)
    with pytest.raises(gio.TensorFormatError, match="classifier.weights"):
        gio.checkpoint_from_bytes(blob)


def test_checkpoint_save_is_deterministic(tmp_path):
    net = _tiny_net()
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    gio.save_checkpoint(net, a)
    gio.save_checkpoint(net, b)
    assert a.read_bytes() == b.read_bytes()


# ---------------------------------------------------------------------------
# dataset bundles


def test_dataset_round_trip(tmp_path):
    ds = synthdata.generate_dataset(3, seed=5)
    path = tmp_path / "data.synth"
    gio.save_dataset(ds, path)
    back = gio.load_dataset(path)
    assert back.seed == 5
    assert len(back.samples) == len(ds.samples)
    np.testing.assert_array_equal(back.train_indices, ds.train_indices)
    np.testing.assert_array_equal(back.test_indices, ds.test_indices)
    for got, want in zip(back.samples, ds.samples):
        assert got.image.tobytes() == want.image.tobytes()
        assert got.label == want.label
        assert got.gt_box == want.gt_box


def test_dataset_file_is_deterministic(tmp_path):
    a, b = tmp_path / "a.synth", tmp_path / "b.synth"
    gio.save_dataset(synthdata.generate_dataset(2, seed=9), a)
    gio.save_dataset(synthdata.generate_dataset(2, seed=9), b)
    assert a.read_bytes() == b.read_bytes()


def test_dataset_missing_entry_rejected(tmp_path):
    blob = gio.bundle_to_bytes("synthsplit/1\nseed=0\n", [("images", np.zeros((1, 1, 4, 4)))])
    path = tmp_path / "bad.synth"
    path.write_bytes(blob)
    with pytest.raises(gio.TensorFormatError, match="missing entries"):
        gio.load_dataset(path)


# ---------------------------------------------------------------------------
# CSVs


def test_box_csv_header_and_round_trip(tmp_path):
    rows = [
        (0, 2, BBox(1, 2, 10, 20), 0.875),
        (1, 4, BBox(0, 0, 63, 63), 0.03125),
    ]
    path = tmp_path / "boxes.csv"
    gio.write_boxes_csv(rows, path)
    text = path.read_text()
    assert text.splitlines()[0] == "image_id,class_id,x_min,y_min,x_max,y_max,score"
    assert gio.read_boxes_csv(path) == rows


def test_box_csv_rejects_foreign_header(tmp_path):
    path = tmp_path / "boxes.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError, match="header"):
        gio.read_boxes_csv(path)


def test_report_csv_contents(tmp_path):
    report = evaluate.EvalReport(
        top1_cls_err=0.25,
        top5_cls_err=0.0,
        top1_loc_err=0.5,
        top5_loc_err=0.25,
        gt_known_loc_acc=0.75,
        records=[],
    )
    path = tmp_path / "report.csv"
    gio.write_report_csv(report, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "metric,value"
    assert lines[1] == "top1_cls_err,0.25"
    assert lines[5] == "gt_known_loc_acc,0.75"


# ---------------------------------------------------------------------------
# rendering


def _decode(png_bytes):
    return np.asarray(Image.open(BytesIO(png_bytes)))


def test_overlay_alpha_zero_reproduces_image():
    rng = np.random.default_rng(4)
    image = rng.random((16, 16))
    cam = rng.random((16, 16))
    pixels = _decode(gio.render_overlay(image, cam, alpha=0.0))
    expected = np.rint(image * 255.0).astype(np.uint8)
    assert pixels.shape == (16, 16, 3)
    for ch in range(3):
        np.testing.assert_array_equal(pixels[:, :, ch], expected)


def test_overlay_constant_map_is_mid_tint():
    # A constant map normalizes to 0.5, which lands on colormap entry 128.
    image = np.zeros((8, 8))
    pixels = _decode(gio.render_overlay(image, np.full((8, 8), 3.7), alpha=1.0))
    assert np.all(pixels == JET_LUT[128])


def test_overlay_uses_full_colormap_range():
    cam = np.linspace(0.0, 1.0, 256).reshape(16, 16)
    pixels = _decode(gio.render_overlay(np.zeros((16, 16)), cam, alpha=1.0))
    np.testing.assert_array_equal(pixels.reshape(256, 3), JET_LUT)


def test_overlay_deterministic_and_writes_file(tmp_path):
    rng = np.random.default_rng(11)
    image = rng.random((1, 12, 12))
    cam = rng.random((12, 12))
    path = tmp_path / "cam.png"
    first = gio.render_overlay(image, cam, path=path)
    second = gio.render_overlay(image, cam)
    assert first == second
    assert path.read_bytes() == first


def test_overlay_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="matching"):
        gio.render_overlay(np.zeros((8, 8)), np.zeros((4, 4)))


def test_overlay_alpha_out_of_range_rejected():
    with pytest.raises(ValueError, match="alpha"):
        gio.render_overlay(np.zeros((4, 4)), np.zeros((4, 4)), alpha=1.5)


def test_jet_lut_endpoints():
    # Cold end is dark blue, hot end dark red, and greens peak mid-table.
    assert JET_LUT.shape == (256, 3)
    assert tuple(JET_LUT[0]) == (0, 0, 129)
    assert tuple(JET_LUT[255]) == (129, 0, 0)
    assert JET_LUT[:, 1].max() == 255
    assert JET_LUT[128, 1] == 255


def test_unit_sheet_layout_and_determinism():
    rng = np.random.default_rng(6)
    grid = [[rng.random((5, 5)) for _ in range(3)] for _ in range(2)]
    grid[1][2] = rng.random((3, 5))  # clipped patch pads into its cell
    first = gio.render_unit_sheet(grid, upscale=2, pad=1)
    second = gio.render_unit_sheet(grid, upscale=2, pad=1)
    assert first == second
    pixels = _decode(first)
    assert pixels.shape == (1 + 2 * (10 + 1), 1 + 3 * (10 + 1))
