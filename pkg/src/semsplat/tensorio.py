"""Self-describing binary formats and image I/O.

Field files ("SGF1"): header with count, SH degree, feature dim, and an
ascii attribute-layout descriptor, followed by little-endian float32
records. Tensor files ("LSMT"): tagged n-dimensional float32 arrays. Both
loads validate the header against the payload, so no out-of-band metadata
is ever needed. RGB goes through 8-bit PNG with round-to-nearest
quantization; quantitative channels (depth, features, points) stay in the
tensor format.
"""

from __future__ import annotations

import struct
import warnings

import numpy as np
from PIL import Image

from .errors import DataError
from .field import SemanticGaussianField

FIELD_MAGIC = b"SGF1"
TENSOR_MAGIC = b"LSMT"
LITTLE_ENDIAN_FLAG = 1
FLOAT32_CODE = 0
QUAT_DRIFT_WARN = 1e-4

# tag -> (allowed ranks, constraint description, trailing-dim requirement)
TENSOR_TAGS = {
    "pointmap": ((3,), "H x W x 3", 3),
    "confidence": ((2,), "H x W", None),
    "depth": ((2,), "H x W", None),
    "feature": ((2, 3), "H x W x N or C x N", None),
    "image": ((3,), "H x W x 3", 3),
    "labels": ((2,), "H x W", None),
}


def _field_layout(degree: int, feature_dim: int) -> str:
    k = (degree + 1) ** 2
    return f"center:3,log_scale:3,rotation:4,opacity_logit:1,sh:{3 * k},semantic:{feature_dim}"


def save_field(path, field: SemanticGaussianField) -> None:
    """Write a field as SGF1 (lossless at 32-bit precision)."""
    arrs = field.to_arrays()
    n = len(field)
    k = field.basis_size
    layout = _field_layout(field.sh_degree, field.feature_dim).encode("ascii")
    record = np.concatenate(
        [
            arrs["centers"],
            arrs["log_scales"],
            arrs["rotations"],
            arrs["opacity_logits"][:, None],
            arrs["sh_coeffs"].reshape(n, 3 * k),
            arrs["semantics"],
        ],
        axis=1,
    ) if n else np.zeros((0, 11 + 3 * k + field.feature_dim))
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<B", LITTLE_ENDIAN_FLAG))
        fh.write(struct.pack("<QII", n, field.sh_degree, field.feature_dim))
        fh.write(struct.pack("<H", len(layout)))
        fh.write(layout)
        fh.write(record.astype("<f4").tobytes())


def load_field(path) -> SemanticGaussianField:
    """Read an SGF1 field; quaternions are re-normalized on load and a
    drift beyond 1e-4 triggers a warning."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != FIELD_MAGIC:
        raise DataError(f"{path}: bad magic; not a field file")
    off = 4
    if len(blob) < off + 1:
        raise DataError(f"{path}: truncated header")
    (endian,) = struct.unpack_from("<B", blob, off)
    off += 1
    if endian != LITTLE_ENDIAN_FLAG:
        raise DataError(f"{path}: unsupported endianness flag {endian}")
    if len(blob) < off + 16:
        raise DataError(f"{path}: truncated header")
    count, degree, feature_dim = struct.unpack_from("<QII", blob, off)
    off += 16
    if degree > 3:
        raise DataError(f"{path}: sh degree {degree} exceeds the supported maximum 3")
    if feature_dim < 1:
        raise DataError(f"{path}: feature dim must be positive, got {feature_dim}")
    if len(blob) < off + 2:
        raise DataError(f"{path}: truncated header")
    (layout_len,) = struct.unpack_from("<H", blob, off)
    off += 2
    if len(blob) < off + layout_len:
        raise DataError(f"{path}: truncated layout descriptor")
    layout = blob[off:off + layout_len].decode("ascii", errors="replace")
    off += layout_len
    expected = _field_layout(degree, feature_dim)
    if layout != expected:
        raise DataError(f"{path}: layout {layout!r} does not match header (expected {expected!r})")
    k = (degree + 1) ** 2
    record_size = 11 + 3 * k + feature_dim
    payload = blob[off:]
    if len(payload) < count * record_size * 4:
        raise DataError(f"{path}: truncated payload")
    if len(payload) > count * record_size * 4:
        raise DataError(f"{path}: trailing bytes after payload")
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(count, record_size) \
        if count else np.zeros((0, record_size))
    rotations = flat[:, 6:10]
    if count:
        drift = np.abs(np.linalg.norm(rotations, axis=1) - 1.0)
        if drift.max() > QUAT_DRIFT_WARN:
            warnings.warn(f"{path}: quaternion norm drifted by {drift.max():.2e}; re-normalized")
    return SemanticGaussianField.from_arrays(
        centers=flat[:, 0:3],
        log_scales=flat[:, 3:6],
        rotations=rotations,
        opacity_logits=flat[:, 10],
        sh_coeffs=flat[:, 11:11 + 3 * k].reshape(count, 3, k),
        semantics=flat[:, 11 + 3 * k:],
    )


def _check_tag_shape(tag: str, shape: tuple, path) -> None:
    if tag not in TENSOR_TAGS:
        raise DataError(f"{path}: unknown tensor tag {tag!r}; expected one of {sorted(TENSOR_TAGS)}")
    ranks, desc, trailing = TENSOR_TAGS[tag]
    if len(shape) not in ranks:
        raise DataError(f"{path}: tag {tag!r} requires shape {desc}, got rank {len(shape)}")
    if trailing is not None and shape[-1] != trailing:
        raise DataError(f"{path}: tag {tag!r} requires shape {desc}, got {shape}")


def save_tensor(path, array, tag: str) -> None:
    """Write a tagged float32 tensor (LSMT)."""
    a = np.asarray(array, dtype=np.float64)
    if a.ndim < 1:
        raise DataError("rank-0 tensors are not supported")
    if not np.all(np.isfinite(a)):
        raise DataError("tensor contains non-finite values")
    _check_tag_shape(tag, a.shape, path)
    tag_b = tag.encode("ascii")
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<B", LITTLE_ENDIAN_FLAG))
        fh.write(struct.pack("<H", len(tag_b)))
        fh.write(tag_b)
        fh.write(struct.pack("<BI", FLOAT32_CODE, a.ndim))
        fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        fh.write(a.astype("<f4").tobytes())


def load_tensor(path, expect_tag: str | None = None):
    """Read an LSMT tensor; returns (float64 array, tag)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != TENSOR_MAGIC:
        raise DataError(f"{path}: bad magic; not a tensor file")
    off = 4
    if len(blob) < off + 3:
        raise DataError(f"{path}: truncated header")
    endian, tag_len = struct.unpack_from("<BH", blob, off)
    off += 3
    if endian != LITTLE_ENDIAN_FLAG:
        raise DataError(f"{path}: unsupported endianness flag {endian}")
    if len(blob) < off + tag_len:
        raise DataError(f"{path}: truncated tag")
    tag = blob[off:off + tag_len].decode("ascii", errors="replace")
    off += tag_len
    if len(blob) < off + 5:
        raise DataError(f"{path}: truncated header")
    dtype_code, rank = struct.unpack_from("<BI", blob, off)
    off += 5
    if dtype_code != FLOAT32_CODE:
        raise DataError(f"{path}: unsupported element type code {dtype_code}")
    if rank < 1 or rank > 8:
        raise DataError(f"{path}: unsupported rank {rank}")
    if len(blob) < off + 8 * rank:
        raise DataError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{rank}Q", blob, off)
    off += 8 * rank
    _check_tag_shape(tag, dims, path)
    n_elem = int(np.prod(dims)) if rank else 1
    payload = blob[off:]
    if len(payload) < 4 * n_elem:
        raise DataError(f"{path}: truncated payload")
    if len(payload) > 4 * n_elem:
        raise DataError(f"{path}: trailing bytes after payload")
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
    if expect_tag is not None and tag != expect_tag:
        raise DataError(f"{path}: expected a {expect_tag!r} tensor, found {tag!r}")
    return arr, tag


def save_png(path, image) -> None:
    """Write an RGB image in [0,1] as 8-bit PNG (round-to-nearest)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError(f"png image must have shape (H, W, 3), got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise DataError("png image contains non-finite values")
    q = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """Read an RGB PNG into float64 [0,1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0
