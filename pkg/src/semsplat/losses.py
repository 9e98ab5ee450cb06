"""Training losses: normalized pointmap regression with confidence
weighting, structural dissimilarity, cosine feature distillation, and the
weighted total.

Every loss ships with a hand-derived gradient function checked against
central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d, correlate2d

from .errors import DataError, InvariantError
from .pointmap import PointMap
from .rasterizer import RenderOutput

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class LossWeights:
    """Weights of the total loss; defaults follow the training recipe."""

    l1: float = 0.25
    l2: float = 0.3
    l3: float = 1.5
    alpha_conf: float = 0.2

    def __post_init__(self):
        for name in ("l1", "l2", "l3", "alpha_conf"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0.0:
                raise DataError(f"{name} must be a non-negative real")
            object.__setattr__(self, name, v)


def ssim_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2D Gaussian window."""
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def _as_image(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise DataError(f"{name} must be (H, W) or (H, W, C), got shape {np.shape(x)}")
    if not np.all(np.isfinite(a)):
        raise DataError(f"{name} contains non-finite values")
    return a


def _check_pair(x, y):
    a = _as_image(x, "x")
    b = _as_image(y, "y")
    if a.shape != b.shape:
        raise DataError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _check_unit_range(a: np.ndarray, name: str) -> None:
    if a.min() < -1e-9 or a.max() > 1.0 + 1e-9:
        raise DataError(f"{name} values must lie in [0, 1]")


def _ssim_channel(x: np.ndarray, y: np.ndarray, k: np.ndarray):
    mu_x = correlate2d(x, k, mode="valid")
    mu_y = correlate2d(y, k, mode="valid")
    var_x = correlate2d(x * x, k, mode="valid") - mu_x * mu_x
    var_y = correlate2d(y * y, k, mode="valid") - mu_y * mu_y
    cov = correlate2d(x * y, k, mode="valid") - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + SSIM_C1
    a2 = 2.0 * cov + SSIM_C2
    b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    b2 = var_x + var_y + SSIM_C2
    s = (a1 * a2) / (b1 * b2)
    return s, (mu_x, mu_y, a1, a2, b1, b2)


def _ssim_value_and_grad(x: np.ndarray, y: np.ndarray, want_grad: bool):
    """Mean SSIM over valid window positions and channels, optionally with
    the gradient w.r.t. x.

    The gradient is the adjoint of the valid-mode window correlation: each
    window-position map scatters back through a full-mode convolution with
    the (symmetric) Gaussian kernel.
    """
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise DataError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for ssim")
    k = ssim_kernel()
    n_ch = x.shape[2]
    total = 0.0
    grad = np.zeros_like(x) if want_grad else None
    n_pos = (x.shape[0] - SSIM_WINDOW + 1) * (x.shape[1] - SSIM_WINDOW + 1)
    denom = float(n_pos * n_ch)
    for c in range(n_ch):
        s, (mu_x, mu_y, a1, a2, b1, b2) = _ssim_channel(x[:, :, c], y[:, :, c], k)
        total += s.sum()
        if not want_grad:
            continue
        u = a2 / (b1 * b2)
        v = a1 / (b1 * b2)
        r1 = s / b1
        r2 = s / b2
        f_const = (2.0 * mu_y * u - 2.0 * mu_x * r1 - 2.0 * mu_y * v + 2.0 * mu_x * r2) / denom
        f_x = (-2.0 * r2) / denom
        f_y = (2.0 * v) / denom
        grad[:, :, c] = (
            convolve2d(f_const, k, mode="full")
            + x[:, :, c] * convolve2d(f_x, k, mode="full")
            + y[:, :, c] * convolve2d(f_y, k, mode="full")
        )
    value = total / denom
    return value, grad


def ssim(x, y) -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5, C1=0.01^2, C2=0.03^2)."""
    a, b = _check_pair(x, y)
    value, _ = _ssim_value_and_grad(a, b, want_grad=False)
    return float(value)


def dssim(x, y) -> float:
    """Structural dissimilarity (1 - SSIM) / 2 for images in [0, 1]."""
    a, b = _check_pair(x, y)
    _check_unit_range(a, "x")
    _check_unit_range(b, "y")
    value, _ = _ssim_value_and_grad(a, b, want_grad=False)
    return float((1.0 - value) / 2.0)


def dssim_grad(x, y) -> np.ndarray:
    """d dssim / dx, same shape as x."""
    a, b = _check_pair(x, y)
    _check_unit_range(a, "x")
    _check_unit_range(b, "y")
    _, g = _ssim_value_and_grad(a, b, want_grad=True)
    g = -0.5 * g
    return g[:, :, 0] if np.asarray(x).ndim == 2 else g


def photometric_l1(x, y) -> float:
    """Mean absolute error."""
    a, b = _check_pair(x, y)
    return float(np.mean(np.abs(a - b)))


def photometric_l1_grad(x, y) -> np.ndarray:
    a, b = _check_pair(x, y)
    g = np.sign(a - b) / a.size
    return g[:, :, 0] if np.asarray(x).ndim == 2 else g


def pointmap_norm(p1: PointMap, p2: PointMap) -> float:
    """Mean Euclidean norm of all valid points across both maps."""
    n1, n2 = p1.valid_count, p2.valid_count
    if n1 + n2 == 0:
        raise DataError("pointmap_norm: no valid pixels in either map")
    s = 0.0
    for pm in (p1, p2):
        if pm.valid_count:
            s += np.linalg.norm(pm.points[pm.mask], axis=1).sum()
    return float(s / (n1 + n2))


@dataclass(frozen=True)
class DepthRegressionResult:
    """Per-pixel loss maps, their sum, and the normalizers/masks used."""

    per_pixel: tuple
    total: float
    pred_norm: float
    gt_norm: float
    masks: tuple


def _joint_masks(pred, gt):
    if len(pred) != 2 or len(gt) != 2:
        raise DataError("expected two views of predicted and ground-truth pointmaps")
    masks = []
    for v in range(2):
        if pred[v].shape != gt[v].shape:
            raise DataError(f"view {v}: prediction shape {pred[v].shape} != ground truth {gt[v].shape}")
        masks.append(pred[v].mask & gt[v].mask)
    return masks


def _masked_norm(pair, masks) -> float:
    count = int(masks[0].sum()) + int(masks[1].sum())
    if count == 0:
        raise DataError("no jointly valid pixels across both views")
    s = 0.0
    for v in range(2):
        if masks[v].any():
            s += np.linalg.norm(pair[v].points[masks[v]], axis=1).sum()
    return float(s / count)


def depth_regression_loss(pred, gt) -> DepthRegressionResult:
    """Scale-normalized pointmap regression.

    Both the prediction pair and the ground-truth pair are divided by their
    own mean-valid-norm factor (over the jointly valid pixels), then the
    per-pixel Euclidean distance is summed over both views.
    """
    masks = _joint_masks(pred, gt)
    z_pred = _masked_norm(pred, masks)
    z_gt = _masked_norm(gt, masks)
    if z_pred <= 0.0 or z_gt <= 0.0:
        raise DataError("zero normalization factor; all valid points are at the origin")
    maps = []
    total = 0.0
    for v in range(2):
        diff = pred[v].points / z_pred - gt[v].points / z_gt
        d = np.linalg.norm(diff, axis=2)
        d = np.where(masks[v], d, 0.0)
        maps.append(d)
        total += float(d.sum())
    return DepthRegressionResult(
        per_pixel=(maps[0], maps[1]),
        total=total,
        pred_norm=z_pred,
        gt_norm=z_gt,
        masks=(masks[0], masks[1]),
    )


def depth_regression_grad(pred, gt):
    """Gradient of depth_regression_loss total w.r.t. both predicted maps.

    The normalizer couples every valid pixel: with unit residual directions
    u_hat and S = sum_i u_hat_i . P_i / z, the gradient at valid pixel j is
    u_hat_j / z - (S / (z * N)) * P_j / |P_j|.
    """
    masks = _joint_masks(pred, gt)
    z_pred = _masked_norm(pred, masks)
    z_gt = _masked_norm(gt, masks)
    if z_pred <= 0.0 or z_gt <= 0.0:
        raise DataError("zero normalization factor; all valid points are at the origin")
    count = int(masks[0].sum()) + int(masks[1].sum())
    s_coupling = 0.0
    units = []
    for v in range(2):
        diff = pred[v].points / z_pred - gt[v].points / z_gt
        d = np.linalg.norm(diff, axis=2)
        safe = np.where(d > 0.0, d, 1.0)
        u = np.where((masks[v] & (d > 0.0))[:, :, None], diff / safe[:, :, None], 0.0)
        units.append(u)
        s_coupling += float(np.einsum("hwc,hwc->", u, np.where(masks[v][:, :, None], pred[v].points, 0.0)))
    grads = []
    for v in range(2):
        p = pred[v].points
        pn = np.linalg.norm(p, axis=2)
        p_unit = np.where((masks[v] & (pn > 0.0))[:, :, None], p / np.where(pn > 0.0, pn, 1.0)[:, :, None], 0.0)
        g = units[v] / z_pred - (s_coupling / (z_pred * z_pred * count)) * p_unit
        grads.append(np.where(masks[v][:, :, None], g, 0.0))
    return grads[0], grads[1]


def confidence_loss(loss_map, confidence, alpha_conf: float = 0.2, mask=None) -> float:
    """Confidence-weighted sum: sum over mask of M * loss - alpha * log M."""
    lm = np.asarray(loss_map, dtype=np.float64)
    m = np.asarray(confidence, dtype=np.float64)
    if lm.shape != m.shape:
        raise DataError(f"loss map shape {lm.shape} != confidence shape {m.shape}")
    if not np.all(np.isfinite(lm)) or not np.all(np.isfinite(m)):
        raise DataError("confidence_loss inputs contain non-finite values")
    if mask is None:
        mask = np.ones(lm.shape, dtype=bool)
    else:
        mask = np.asarray(mask).astype(bool)
        if mask.shape != lm.shape:
            raise DataError(f"mask shape {mask.shape} != loss map shape {lm.shape}")
    if np.any(m[mask] < 1.0):
        raise InvariantError("confidence must satisfy M >= 1 on every masked pixel")
    alpha_conf = float(alpha_conf)
    if alpha_conf < 0.0 or not np.isfinite(alpha_conf):
        raise DataError("alpha_conf must be a non-negative real")
    vals = m * lm - alpha_conf * np.log(m)
    return float(vals[mask].sum())


def confidence_loss_grad(loss_map, confidence, alpha_conf: float = 0.2, mask=None):
    """(d/d loss_map, d/d confidence) of confidence_loss."""
    lm = np.asarray(loss_map, dtype=np.float64)
    m = np.asarray(confidence, dtype=np.float64)
    if mask is None:
        mask = np.ones(lm.shape, dtype=bool)
    else:
        mask = np.asarray(mask).astype(bool)
    d_loss = np.where(mask, m, 0.0)
    d_conf = np.where(mask, lm - float(alpha_conf) / m, 0.0)
    return d_loss, d_conf


def semantic_cosine_loss(s, s_teacher) -> float:
    """Mean over pixels of 1 - cosine(s, s_teacher).

    Teacher features must have nonzero norm at every pixel; rendered pixels
    with zero norm contribute loss 1 (orthogonal convention).
    """
    a = np.asarray(s, dtype=np.float64)
    b = np.asarray(s_teacher, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 3:
        raise DataError(f"feature maps must share shape (H, W, N); got {a.shape} vs {b.shape}")
    if not np.all(np.isfinite(a)) or not np.all(np.isfinite(b)):
        raise DataError("feature maps contain non-finite values")
    nb = np.linalg.norm(b, axis=2)
    if np.any(nb == 0.0):
        raise DataError("teacher features have a zero-norm pixel")
    na = np.linalg.norm(a, axis=2)
    dot = np.einsum("hwc,hwc->hw", a, b)
    cos = np.where(na > 0.0, dot / (np.where(na > 0.0, na, 1.0) * nb), 0.0)
    # rounding can push the cosine of near-parallel vectors past 1
    cos = np.clip(cos, -1.0, 1.0)
    return float(np.mean(1.0 - cos))


def semantic_cosine_grad(s, s_teacher) -> np.ndarray:
    """Gradient of semantic_cosine_loss w.r.t. the first argument."""
    a = np.asarray(s, dtype=np.float64)
    b = np.asarray(s_teacher, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 3:
        raise DataError(f"feature maps must share shape (H, W, N); got {a.shape} vs {b.shape}")
    nb = np.linalg.norm(b, axis=2)
    if np.any(nb == 0.0):
        raise DataError("teacher features have a zero-norm pixel")
    na = np.linalg.norm(a, axis=2)
    safe_na = np.where(na > 0.0, na, 1.0)
    a_hat = a / safe_na[:, :, None]
    b_hat = b / nb[:, :, None]
    cos = np.einsum("hwc,hwc->hw", a_hat, b_hat)
    g = -(b_hat - a_hat * cos[:, :, None]) / safe_na[:, :, None]
    g = np.where((na > 0.0)[:, :, None], g, 0.0)
    return g / (a.shape[0] * a.shape[1])


@dataclass(frozen=True)
class RenderTargets:
    """Supervision for the rendered channels: RGB and teacher features."""

    color: np.ndarray
    feature: np.ndarray


@dataclass(frozen=True)
class PointmapSupervision:
    """Two predicted and two ground-truth pointmaps (views 1 and 2)."""

    pred: tuple
    gt: tuple


@dataclass(frozen=True)
class LossBreakdown:
    """Weighted total plus the unweighted components."""

    total: float
    photometric: float
    dssim: float
    semantic: float
    confidence: float


def combine_loss_components(photometric: float, dssim_value: float, semantic: float,
                            confidence: float, weights: LossWeights | None = None) -> float:
    """photometric + l1 * dssim + l2 * semantic + l3 * confidence."""
    w = weights if weights is not None else LossWeights()
    return photometric + w.l1 * dssim_value + w.l2 * semantic + w.l3 * confidence


def total_loss(render: RenderOutput, targets: RenderTargets,
               pointmaps: PointmapSupervision | None = None,
               weights: LossWeights | None = None) -> LossBreakdown:
    """Full training objective on one view pair.

    The confidence component sums the confidence-weighted regression loss
    over both views (each view weighted by its own predicted confidence).
    Passing pointmaps=None drops the geometric terms (renders-only use).
    """
    w = weights if weights is not None else LossWeights()
    photo = photometric_l1(render.color, targets.color)
    ds = dssim(render.color, targets.color)
    sem = semantic_cosine_loss(render.feature, targets.feature)
    conf = 0.0
    if pointmaps is not None:
        reg = depth_regression_loss(pointmaps.pred, pointmaps.gt)
        for v in range(2):
            conf += confidence_loss(
                reg.per_pixel[v],
                pointmaps.pred[v].confidence,
                alpha_conf=w.alpha_conf,
                mask=reg.masks[v],
            )
    total = combine_loss_components(photo, ds, sem, conf, w)
    return LossBreakdown(total=float(total), photometric=float(photo),
                         dssim=float(ds), semantic=float(sem), confidence=float(conf))
