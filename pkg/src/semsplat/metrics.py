"""Evaluation protocol: image quality, open-vocabulary segmentation,
depth accuracy, and PCA feature visualization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .losses import ssim as _ssim_impl

IGNORE_LABEL = -1
PSNR_CAP_DB = 100.0
TAU_THRESHOLD = 1.03
DEFAULT_CLASS_NAMES = ("Wall", "Floor", "Ceiling", "Chair", "Table", "Bed", "Sofa", "Others")


@dataclass(frozen=True)
class LabelMap:
    """Integer labels per pixel with an ordered class-name list.

    IGNORE_LABEL (-1) marks pixels excluded from metrics.
    """

    labels: np.ndarray
    class_names: tuple

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise DataError(f"labels must be 2D, got shape {lab.shape}")
        if not np.issubdtype(lab.dtype, np.integer):
            asint = lab.astype(np.int64)
            if not np.array_equal(asint, lab):
                raise DataError("labels must be integer-valued")
            lab = asint
        else:
            lab = lab.astype(np.int64)
        names = tuple(str(n) for n in self.class_names)
        if len(names) < 1:
            raise DataError("class_names must be non-empty")
        valid = (lab == IGNORE_LABEL) | ((lab >= 0) & (lab < len(names)))
        if not valid.all():
            raise DataError("labels must lie in [0, num_classes) or equal the ignore sentinel")
        labf = np.array(lab, copy=True)
        labf.flags.writeable = False
        object.__setattr__(self, "labels", labf)
        object.__setattr__(self, "class_names", names)


@dataclass(frozen=True)
class TextEmbeddingSet:
    """One embedding per class name, row-aligned."""

    embeddings: np.ndarray
    class_names: tuple

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if emb.ndim != 2:
            raise DataError(f"embeddings must have shape (C, N), got {emb.shape}")
        names = tuple(str(n) for n in self.class_names)
        if emb.shape[0] != len(names):
            raise DataError(f"{emb.shape[0]} embeddings vs {len(names)} class names")
        if not np.all(np.isfinite(emb)):
            raise DataError("embeddings contain non-finite values")
        norms = np.linalg.norm(emb, axis=1)
        if np.any(norms == 0.0):
            raise DataError("every class embedding must have nonzero norm")
        ef = np.array(emb, copy=True)
        ef.flags.writeable = False
        object.__setattr__(self, "embeddings", ef)
        object.__setattr__(self, "class_names", names)


def psnr(x, y, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 for identical inputs."""
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"image shapes differ: {a.shape} vs {b.shape}")
    max_val = float(max_val)
    if max_val <= 0.0:
        raise DataError("max_val must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(max_val * max_val / mse)))


def ssim(x, y) -> float:
    """Mean SSIM; shares the window and constants of the training loss."""
    return _ssim_impl(x, y)


def open_vocab_segment(features: np.ndarray, text: TextEmbeddingSet) -> LabelMap:
    """Label each pixel by cosine similarity against the class embeddings.

    Ties break toward the lowest class index. Zero-norm feature pixels go
    to the class named "Others" if present, else to the last class.
    """
    feat = np.asarray(features, dtype=np.float64)
    if feat.ndim != 3:
        raise DataError(f"features must have shape (H, W, N), got {feat.shape}")
    if feat.shape[2] != text.embeddings.shape[1]:
        raise DataError(
            f"feature dim {feat.shape[2]} != text embedding dim {text.embeddings.shape[1]}"
        )
    if not np.all(np.isfinite(feat)):
        raise DataError("features contain non-finite values")
    t_hat = text.embeddings / np.linalg.norm(text.embeddings, axis=1, keepdims=True)
    f_norm = np.linalg.norm(feat, axis=2)
    safe = np.where(f_norm > 0.0, f_norm, 1.0)
    f_hat = feat / safe[:, :, None]
    cos = np.einsum("hwn,cn->hwc", f_hat, t_hat)
    labels = np.argmax(cos, axis=2).astype(np.int64)
    fallback = len(text.class_names) - 1
    for i, name in enumerate(text.class_names):
        if name == "Others":
            fallback = i
            break
    labels = np.where(f_norm > 0.0, labels, fallback)
    return LabelMap(labels=labels, class_names=text.class_names)


def miou_pixel_acc(pred: LabelMap, gt: LabelMap):
    """(mIoU, pixel accuracy) over non-ignored pixels.

    IoU is averaged over the classes present in gt or pred; accuracy is the
    plain fraction of matching pixels.
    """
    if pred.class_names != gt.class_names:
        raise DataError("prediction and ground truth class lists differ")
    if pred.labels.shape != gt.labels.shape:
        raise DataError(f"label shapes differ: {pred.labels.shape} vs {gt.labels.shape}")
    keep = (gt.labels != IGNORE_LABEL) & (pred.labels != IGNORE_LABEL)
    if not keep.any():
        raise DataError("all pixels ignored; metrics undefined")
    p = pred.labels[keep]
    g = gt.labels[keep]
    present = np.union1d(np.unique(p), np.unique(g))
    ious = []
    for c in present:
        tp = int(np.sum((p == c) & (g == c)))
        fp = int(np.sum((p == c) & (g != c)))
        fn = int(np.sum((p != c) & (g == c)))
        ious.append(tp / (tp + fp + fn))
    acc = float(np.mean(p == g))
    return float(np.mean(ious)), acc


def depth_rel_tau(pred, gt, mask=None):
    """(rel, tau) on 0-100 scale: mean absolute relative error and the
    fraction of pixels with max(pred/gt, gt/pred) below 1.03.

    Inputs are expected to be median-aligned already.
    """
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise DataError(f"depth shapes differ: {p.shape} vs {g.shape}")
    if mask is None:
        mask = np.ones(p.shape, dtype=bool)
    else:
        mask = np.asarray(mask).astype(bool)
        if mask.shape != p.shape:
            raise DataError(f"mask shape {mask.shape} != depth shape {p.shape}")
    if not mask.any():
        raise DataError("empty mask for depth metrics")
    pm = p[mask]
    gm = g[mask]
    if np.any(gm <= 0.0):
        raise DataError("ground-truth depth must be positive inside the mask")
    rel = float(np.mean(np.abs(pm - gm) / gm)) * 100.0
    with np.errstate(divide="ignore"):
        ratio = np.where(pm > 0.0, np.maximum(pm / gm, gm / pm), np.inf)
    tau = float(np.mean(ratio < TAU_THRESHOLD)) * 100.0
    return rel, tau


def pca_visualize(features: np.ndarray) -> np.ndarray:
    """Project features onto the top-3 principal components as an RGB image.

    Channels are mean-centered, projected onto descending-eigenvalue
    components of the pixel covariance, then min-max scaled to [0, 1]. Each
    component's largest-magnitude loading is made positive; zero-variance
    components render as constant 0.5.
    """
    feat = np.asarray(features, dtype=np.float64)
    if feat.ndim != 3:
        raise DataError(f"features must have shape (H, W, N), got {feat.shape}")
    h, w, n = feat.shape
    if h * w < 3:
        raise DataError("pca needs at least 3 pixels")
    if n < 3:
        raise DataError("pca needs at least 3 feature channels")
    if not np.all(np.isfinite(feat)):
        raise DataError("features contain non-finite values")
    flat = feat.reshape(-1, n)
    centered = flat - flat.mean(axis=0)
    cov = centered.T @ centered / flat.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    out = np.full((h * w, 3), 0.5)
    floor = max(float(evals[0]), 0.0) * 1e-10
    for c in range(3):
        if evals[c] <= floor or evals[c] <= 0.0:
            continue
        vec = evecs[:, c]
        lead = np.argmax(np.abs(vec))
        if vec[lead] < 0.0:
            vec = -vec
        proj = centered @ vec
        lo, hi = float(proj.min()), float(proj.max())
        if hi - lo < 1e-12:
            continue
        out[:, c] = (proj - lo) / (hi - lo)
    return out.reshape(h, w, 3)
