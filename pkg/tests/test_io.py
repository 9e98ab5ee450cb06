import struct
import warnings

import numpy as np
import pytest

from semsplat.errors import DataError
from semsplat.field import SemanticGaussian, SemanticGaussianField
from semsplat.synthetic import random_field
from semsplat.tensorio import (
    load_field,
    load_png,
    load_tensor,
    save_field,
    save_png,
    save_tensor,
)


def f32(a):
    return np.asarray(a).astype("<f4").astype(np.float64)


def load_quiet(path):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        return load_field(path)


def field_header_len(blob):
    (layout_len,) = struct.unpack_from("<H", blob, 21)
    return 23 + layout_len


def test_field_round_trip_f32(tmp_path, rng):
    field = random_field(rng, 7, sh_degree=2, feature_dim=5)
    path = tmp_path / "field.sgf"
    save_field(path, field)
    loaded = load_quiet(path)
    assert loaded.sh_degree == 2 and loaded.feature_dim == 5 and len(loaded) == 7
    orig = field.to_arrays()
    got = loaded.to_arrays()
    for key in ("centers", "log_scales", "opacity_logits", "sh_coeffs", "semantics"):
        np.testing.assert_array_equal(got[key], f32(orig[key]))
    # rotations are re-normalized after the f32 cast
    q32 = f32(orig["rotations"])
    expected = q32 / np.linalg.norm(q32, axis=-1)[..., None]
    np.testing.assert_array_equal(got["rotations"], expected)


def test_field_f32_values_round_trip_byte_identical(tmp_path):
    # parameters chosen exactly representable in float32, quaternion norm
    # exactly 1: save -> load -> save reproduces the file byte for byte
    g = SemanticGaussian(
        center=[0.25, -1.5, 3.0],
        log_scale=[-0.5, 0.0, 0.125],
        rotation=[0.5, 0.5, 0.5, 0.5],
        opacity_logit=0.75,
        sh_coeffs=np.array([[0.5], [0.25], [1.0]]),
        semantic=[1.0, -2.0],
    )
    field = SemanticGaussianField((g,), 0, 2)
    p1, p2 = tmp_path / "a.sgf", tmp_path / "b.sgf"
    save_field(p1, field)
    save_field(p2, load_quiet(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_empty_field_round_trip(tmp_path):
    field = SemanticGaussianField((), sh_degree=1, feature_dim=3)
    path = tmp_path / "empty.sgf"
    save_field(path, field)
    loaded = load_quiet(path)
    assert len(loaded) == 0
    assert loaded.sh_degree == 1 and loaded.feature_dim == 3


def test_field_header_corruption(tmp_path, rng):
    path = tmp_path / "field.sgf"
    save_field(path, random_field(rng, 2, sh_degree=1, feature_dim=2))
    blob = bytearray(path.read_bytes())

    def reject(mutated, match):
        bad = tmp_path / "bad.sgf"
        bad.write_bytes(bytes(mutated))
        with pytest.raises(DataError, match=match):
            load_field(bad)

    reject(b"XXXX" + blob[4:], "bad magic")
    reject(blob[:-1], "truncated payload")
    reject(blob + b"\x00", "trailing bytes")
    flipped = bytearray(blob)
    flipped[4] = 0
    reject(flipped, "endianness")
    deg = bytearray(blob)
    deg[13:17] = struct.pack("<I", 7)
    reject(deg, "exceeds the supported maximum")
    fd = bytearray(blob)
    fd[17:21] = struct.pack("<I", 0)
    reject(fd, "feature dim")
    lay = bytearray(blob)
    lay[23] = ord("x")
    reject(lay, "layout")
    reject(blob[:10], "truncated header")


def test_field_quaternion_drift_warning(tmp_path, rng):
    path = tmp_path / "field.sgf"
    save_field(path, random_field(rng, 1, sh_degree=0, feature_dim=1))
    blob = bytearray(path.read_bytes())
    off = field_header_len(blob) + 6 * 4
    quat = np.frombuffer(bytes(blob[off:off + 16]), dtype="<f4") * 1.01
    blob[off:off + 16] = quat.astype("<f4").tobytes()
    path.write_bytes(bytes(blob))
    with pytest.warns(UserWarning, match="drifted"):
        loaded = load_field(path)
    # re-normalized on load regardless
    np.testing.assert_allclose(
        np.linalg.norm(loaded.to_arrays()["rotations"], axis=1), 1.0, atol=1e-12
    )


@pytest.mark.parametrize(
    "tag,shape",
    [
        ("pointmap", (4, 5, 3)),
        ("confidence", (4, 5)),
        ("depth", (3, 7)),
        ("feature", (4, 5, 6)),
        ("feature", (8, 6)),
        ("image", (2, 3, 3)),
        ("labels", (2, 2)),
    ],
)
def test_tensor_round_trip(tmp_path, rng, tag, shape):
    data = f32(rng.normal(size=shape))
    path = tmp_path / "t.lsmt"
    save_tensor(path, data, tag)
    arr, got_tag = load_tensor(path)
    assert got_tag == tag
    np.testing.assert_array_equal(arr, data)
    arr2, _ = load_tensor(path, expect_tag=tag)
    np.testing.assert_array_equal(arr2, data)


def test_tensor_save_validation(tmp_path, rng):
    path = tmp_path / "t.lsmt"
    with pytest.raises(DataError, match="rank-0"):
        save_tensor(path, np.float64(3.0), "depth")
    with pytest.raises(DataError, match="non-finite"):
        save_tensor(path, np.full((2, 2), np.nan), "depth")
    with pytest.raises(DataError, match="unknown tensor tag"):
        save_tensor(path, np.zeros((2, 2)), "mystery")
    with pytest.raises(DataError, match="pointmap"):
        save_tensor(path, np.zeros((2, 2, 4)), "pointmap")
    with pytest.raises(DataError, match="confidence"):
        save_tensor(path, np.zeros((2, 2, 2)), "confidence")


def test_tensor_expect_tag_mismatch(tmp_path, rng):
    path = tmp_path / "t.lsmt"
    save_tensor(path, rng.uniform(size=(3, 3)), "depth")
    with pytest.raises(DataError, match="expected a 'confidence'"):
        load_tensor(path, expect_tag="confidence")


def test_tensor_corruption(tmp_path, rng):
    path = tmp_path / "t.lsmt"
    save_tensor(path, rng.uniform(size=(3, 4)), "depth")
    blob = bytearray(path.read_bytes())
    tag_len = struct.unpack_from("<H", blob, 5)[0]

    def reject(mutated, match):
        bad = tmp_path / "bad.lsmt"
        bad.write_bytes(bytes(mutated))
        with pytest.raises(DataError, match=match):
            load_tensor(bad)

    reject(b"ZZZZ" + blob[4:], "bad magic")
    reject(blob[:-1], "truncated payload")
    reject(blob + b"\xff", "trailing bytes")
    end = bytearray(blob)
    end[4] = 2
    reject(end, "endianness")
    dt = bytearray(blob)
    dt[7 + tag_len] = 1
    reject(dt, "element type")
    rk = bytearray(blob)
    rk[8 + tag_len:12 + tag_len] = struct.pack("<I", 9)
    reject(rk, "unsupported rank")
    tg = bytearray(blob)
    tg[7] = ord("x")
    reject(tg, "unknown tensor tag")
    reject(blob[:6], "truncated header")


def test_png_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, size=(5, 6, 3)) / 255.0
    path = tmp_path / "img.png"
    save_png(path, img)
    np.testing.assert_array_equal(load_png(path), img)


def test_png_quantization_and_clipping(tmp_path):
    path = tmp_path / "img.png"
    vals = np.array([0.5 / 255.0, 0.4999 / 255.0, -0.3, 1.7])
    img = np.broadcast_to(vals[:, None, None], (4, 2, 3)).copy()
    save_png(path, img)
    out = load_png(path)
    assert out[0, 0, 0] == 1.0 / 255.0   # round half up
    assert out[1, 0, 0] == 0.0           # round down below half
    assert out[2, 0, 0] == 0.0           # clipped at 0
    assert out[3, 0, 0] == 1.0           # clipped at 255


def test_png_validation(tmp_path):
    path = tmp_path / "img.png"
    with pytest.raises(DataError):
        save_png(path, np.zeros((4, 4)))
    with pytest.raises(DataError):
        save_png(path, np.zeros((4, 4, 4)))
    with pytest.raises(DataError):
        save_png(path, np.full((2, 2, 3), np.inf))
