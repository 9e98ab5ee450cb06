"""Camera recovery from pixel-aligned point maps.

Focal length: the per-pixel pinhole residual ||(i', j') - f (P0, P1)/P2||
(centered integer pixel coordinates i' = i - W/2, j' = j - H/2) is a
weighted geometric-median-type objective in the scalar f, minimized by
Weiszfeld iteratively-reweighted least squares. Pose: P3P (Grunert's
quartic) minimal solver inside RANSAC, refined by Gauss-Newton on the
inlier reprojection error. Depth alignment: masked-median rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Intrinsics
from .errors import DataError, NumericalError
from .pointmap import PointMap

RESIDUAL_FLOOR = 1e-8


@dataclass(frozen=True)
class FocalEstimate:
    """Result of the Weiszfeld focal solve.

    objective_history[0] is the objective at the closed-form least-squares
    start; each later entry follows one IRLS update, so the sequence is
    non-increasing.
    """

    focal: float
    iterations: int
    converged: bool
    objective_history: np.ndarray


@dataclass(frozen=True)
class RansacParams:
    """RANSAC controls; the seed is mandatory for reproducibility."""

    seed: int
    iterations: int = 256
    inlier_px: float = 2.0

    def __post_init__(self):
        if int(self.iterations) < 1:
            raise DataError("ransac iterations must be >= 1")
        if not np.isfinite(float(self.inlier_px)) or float(self.inlier_px) <= 0.0:
            raise DataError("inlier_px must be a positive real")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "iterations", int(self.iterations))
        object.__setattr__(self, "inlier_px", float(self.inlier_px))


@dataclass(frozen=True)
class RelativePose:
    """Rigid world-to-camera transform with the supporting inlier ratio."""

    rotation: np.ndarray
    translation: np.ndarray
    inlier_ratio: float

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if R.shape != (3, 3) or t.shape != (3,):
            raise DataError("pose must be a 3x3 rotation and a 3-vector")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-6 or np.linalg.det(R) < 0.0:
            raise DataError("rotation must be in SO(3) within 1e-6")
        Rf = np.array(R, copy=True)
        Rf.flags.writeable = False
        tf = np.array(t, copy=True)
        tf.flags.writeable = False
        object.__setattr__(self, "rotation", Rf)
        object.__setattr__(self, "translation", tf)
        object.__setattr__(self, "inlier_ratio", float(self.inlier_ratio))


def _focal_objective(f: float, a: np.ndarray, b: np.ndarray, o: np.ndarray) -> float:
    return float(np.sum(o * np.linalg.norm(b - f * a, axis=1)))


def estimate_focal_weiszfeld(
    pointmap: PointMap,
    weights: np.ndarray | None = None,
    max_iter: int = 10,
    tol: float = 1e-5,
    z_min: float = 1e-6,
) -> FocalEstimate:
    """Recover a shared focal length from one point map.

    Pixels are usable when masked, positively weighted, and in front of the
    camera (P2 > z_min). Weights default to the pointmap confidence.
    Residuals below 1e-8 get capped reweighting. Invariant to uniform
    positive scaling of the weights.
    """
    h, w = pointmap.shape
    if weights is None:
        o_full = pointmap.confidence
    else:
        o_full = np.asarray(weights, dtype=np.float64)
        if o_full.shape != (h, w):
            raise DataError(f"weights must have shape {(h, w)}, got {o_full.shape}")
        if not np.all(np.isfinite(o_full)) or np.any(o_full < 0.0):
            raise DataError("weights must be finite and non-negative")
    usable = pointmap.mask & (o_full > 0.0) & (pointmap.points[:, :, 2] > z_min)
    if int(usable.sum()) < 2:
        raise DataError("fewer than 2 usable pixels for focal estimation")

    rows, cols = np.nonzero(usable)
    p = pointmap.points[rows, cols]
    a = p[:, :2] / p[:, 2:3]
    b = np.stack([cols.astype(np.float64) - w / 2.0, rows.astype(np.float64) - h / 2.0], axis=1)
    o = o_full[rows, cols]

    den = float(np.sum(o * np.einsum("nd,nd->n", a, a)))
    if den <= 0.0:
        raise NumericalError("degenerate focal system: all projected points at the principal point")
    f = float(np.sum(o * np.einsum("nd,nd->n", a, b))) / den
    history = [_focal_objective(f, a, b, o)]
    converged = False
    used = 0
    for _ in range(int(max_iter)):
        r = np.linalg.norm(b - f * a, axis=1)
        wt = o / np.maximum(r, RESIDUAL_FLOOR)
        den = float(np.sum(wt * np.einsum("nd,nd->n", a, a)))
        if den <= 0.0 or not np.isfinite(den):
            raise NumericalError("weiszfeld focal iteration degenerated")
        f_new = float(np.sum(wt * np.einsum("nd,nd->n", a, b))) / den
        if not np.isfinite(f_new):
            raise NumericalError("weiszfeld focal iteration diverged")
        used += 1
        history.append(_focal_objective(f_new, a, b, o))
        step = abs(f_new - f)
        f = f_new
        if step < tol * max(abs(f), 1e-12):
            converged = True
            break
    if f <= 0.0:
        converged = False
    return FocalEstimate(
        focal=f,
        iterations=used,
        converged=converged,
        objective_history=np.asarray(history),
    )


def average_focal(estimates) -> float:
    """Arithmetic mean of converged per-view focal estimates."""
    ests = list(estimates)
    if not ests:
        raise DataError("average_focal requires at least one estimate")
    for i, e in enumerate(ests):
        if not isinstance(e, FocalEstimate):
            raise DataError(f"estimates[{i}] is not a FocalEstimate")
        if not e.converged:
            raise DataError(f"estimates[{i}] did not converge")
    return float(np.mean([e.focal for e in ests]))


def _p3p_grunert(x_world: np.ndarray, bearings: np.ndarray):
    """Grunert's P3P: camera-frame depths along three unit bearings.

    Returns a list of (R, t) world-to-camera candidates (possibly empty for
    degenerate triples). The quartic in the depth ratio v = d3/d1 uses the
    standard resultant coefficients; the second ratio u = d2/d1 follows
    linearly from the difference of two of the three law-of-cosines
    constraints.
    """
    a2 = float(np.sum((x_world[1] - x_world[2]) ** 2))
    b2 = float(np.sum((x_world[0] - x_world[2]) ** 2))
    c2 = float(np.sum((x_world[0] - x_world[1]) ** 2))
    if min(a2, b2, c2) < 1e-16:
        return []
    ca = float(bearings[1] @ bearings[2])
    cb = float(bearings[0] @ bearings[2])
    cg = float(bearings[0] @ bearings[1])
    k1 = a2 / b2
    k2 = c2 / b2
    a4 = k1 ** 2 - 2 * k1 * k2 - 2 * k1 + k2 ** 2 - 4 * k2 * ca ** 2 + 2 * k2 + 1
    a3 = -4 * (k1 ** 2 * cb - 2 * k1 * k2 * cb - k1 * ca * cg - k1 * cb
               + k2 ** 2 * cb - 2 * k2 * ca ** 2 * cb - k2 * ca * cg + k2 * cb + ca * cg)
    a2c = 2 * (2 * k1 ** 2 * cb ** 2 + k1 ** 2 - 4 * k1 * k2 * cb ** 2 - 2 * k1 * k2
               - 4 * k1 * ca * cb * cg - 2 * k1 * cg ** 2 + 2 * k2 ** 2 * cb ** 2 + k2 ** 2
               - 2 * k2 * ca ** 2 - 4 * k2 * ca * cb * cg + 2 * ca ** 2 + 2 * cg ** 2 - 1)
    a1 = -4 * (k1 ** 2 * cb - 2 * k1 * k2 * cb - k1 * ca * cg - 2 * k1 * cb * cg ** 2
               + k1 * cb + k2 ** 2 * cb - k2 * ca * cg - k2 * cb + ca * cg)
    a0 = k1 ** 2 - 2 * k1 * k2 - 4 * k1 * cg ** 2 + 2 * k1 + k2 ** 2 - 2 * k2 + 1
    coeffs = np.array([a4, a3, a2c, a1, a0])
    if not np.all(np.isfinite(coeffs)) or abs(a4) < 1e-14 * max(1.0, float(np.abs(coeffs).max())):
        return []
    out = []
    for root in np.roots(coeffs):
        if abs(root.imag) > 1e-8 * max(1.0, abs(root.real)):
            continue
        v = float(root.real)
        if v <= 0.0:
            continue
        den = 2.0 * (cg - v * ca)
        if abs(den) < 1e-12:
            continue
        u = (1.0 - v ** 2 + (k1 - k2) * (1.0 + v ** 2 - 2.0 * v * cb)) / den
        if u <= 0.0:
            continue
        s = 1.0 + v ** 2 - 2.0 * v * cb
        if s <= 0.0:
            continue
        d1 = np.sqrt(b2 / s)
        depths = np.array([d1, u * d1, v * d1])
        y_cam = depths[:, None] * bearings
        xc = x_world - x_world.mean(axis=0)
        yc = y_cam - y_cam.mean(axis=0)
        u_m, _s, vt = np.linalg.svd(xc.T @ yc)
        d_fix = np.diag([1.0, 1.0, float(np.sign(np.linalg.det(vt.T @ u_m.T)))])
        rot = vt.T @ d_fix @ u_m.T
        t = y_cam.mean(axis=0) - rot @ x_world.mean(axis=0)
        out.append((rot, t))
    return out


def _so3_exp(w: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    K = np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])
    if theta < 1e-12:
        return np.eye(3) + K + 0.5 * (K @ K)
    return (
        np.eye(3)
        + (np.sin(theta) / theta) * K
        + ((1.0 - np.cos(theta)) / (theta * theta)) * (K @ K)
    )


def _project(points: np.ndarray, intr: Intrinsics, rot: np.ndarray, t: np.ndarray):
    xc = points @ rot.T + t
    z = xc[:, 2]
    valid = z > 1e-9
    zs = np.where(valid, z, 1.0)
    u = intr.fx * xc[:, 0] / zs + intr.cx
    v = intr.fy * xc[:, 1] / zs + intr.cy
    return np.stack([u, v], axis=1), valid, xc


def _refine_pose_gn(points, pixels, intr, rot, t, iters: int = 20):
    for _ in range(iters):
        proj, valid, xc = _project(points, intr, rot, t)
        if not valid.all():
            break
        res = (proj - pixels).reshape(-1)
        z = xc[:, 2]
        n = points.shape[0]
        A = np.zeros((n, 2, 3))
        A[:, 0, 0] = intr.fx / z
        A[:, 0, 2] = -intr.fx * xc[:, 0] / (z * z)
        A[:, 1, 1] = intr.fy / z
        A[:, 1, 2] = -intr.fy * xc[:, 1] / (z * z)
        rx = xc - t
        skew = np.zeros((n, 3, 3))
        skew[:, 0, 1] = -rx[:, 2]
        skew[:, 0, 2] = rx[:, 1]
        skew[:, 1, 0] = rx[:, 2]
        skew[:, 1, 2] = -rx[:, 0]
        skew[:, 2, 0] = -rx[:, 1]
        skew[:, 2, 1] = rx[:, 0]
        j_rot = -np.einsum("nij,njk->nik", A, skew)
        J = np.concatenate([j_rot, A], axis=2).reshape(-1, 6)
        g = J.T @ res
        H = J.T @ J + 1e-12 * np.eye(6)
        try:
            delta = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            break
        rot = _so3_exp(delta[:3]) @ rot
        t = t + delta[3:]
        if np.linalg.norm(delta) < 1e-12:
            break
    # polar hygiene so downstream SO(3) validation is airtight
    u_m, _s, vt = np.linalg.svd(rot)
    rot = u_m @ np.diag([1.0, 1.0, float(np.sign(np.linalg.det(u_m @ vt)))]) @ vt
    return rot, t


def estimate_relative_pose(points3d, pixels2d, intrinsics: Intrinsics, ransac: RansacParams) -> RelativePose:
    """Robust pose from 3D-2D correspondences via P3P-RANSAC.

    Hypotheses are scored by inlier count (reprojection error below
    ransac.inlier_px with positive depth); ties keep the earliest
    hypothesis, so the result is a pure function of the inputs and seed.
    The winner is Gauss-Newton-refined on its inliers.
    """
    pts = np.asarray(points3d, dtype=np.float64)
    pix = np.asarray(pixels2d, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DataError(f"points3d must have shape (M, 3), got {pts.shape}")
    if pix.shape != (pts.shape[0], 2):
        raise DataError(f"pixels2d must have shape ({pts.shape[0]}, 2), got {pix.shape}")
    if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(pix)):
        raise DataError("correspondences contain non-finite values")
    m = pts.shape[0]
    if m < 4:
        raise DataError(f"at least 4 correspondences required, got {m}")
    if not isinstance(intrinsics, Intrinsics):
        raise DataError("intrinsics must be an Intrinsics instance")

    bearings = np.stack([
        (pix[:, 0] - intrinsics.cx) / intrinsics.fx,
        (pix[:, 1] - intrinsics.cy) / intrinsics.fy,
        np.ones(m),
    ], axis=1)
    bearings = bearings / np.linalg.norm(bearings, axis=1, keepdims=True)

    rng = np.random.Generator(np.random.PCG64(ransac.seed))
    thr2 = ransac.inlier_px ** 2
    best_count = -1
    best_pose = None
    best_mask = None
    for _ in range(ransac.iterations):
        sample = rng.choice(m, size=3, replace=False)
        for rot, t in _p3p_grunert(pts[sample], bearings[sample]):
            proj, valid, _ = _project(pts, intrinsics, rot, t)
            err2 = np.sum((proj - pix) ** 2, axis=1)
            inl = valid & (err2 < thr2)
            count = int(inl.sum())
            if count > best_count:
                best_count = count
                best_pose = (rot, t)
                best_mask = inl
    if best_count < 4 or best_pose is None:
        raise NumericalError("ransac found no pose with at least 4 inliers")
    rot, t = _refine_pose_gn(pts[best_mask], pix[best_mask], intrinsics, best_pose[0], best_pose[1])
    proj, valid, _ = _project(pts, intrinsics, rot, t)
    err2 = np.sum((proj - pix) ** 2, axis=1)
    inl = valid & (err2 < thr2)
    if int(inl.sum()) < best_count:
        # refinement should not lose support; fall back to the raw winner
        rot, t = best_pose
        inl = best_mask
    return RelativePose(rotation=rot, translation=t, inlier_ratio=float(inl.sum()) / m)


def lower_median(values: np.ndarray) -> float:
    """Median with even counts resolved to the lower middle element."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise DataError("median of an empty set")
    k = (v.size - 1) // 2
    return float(np.partition(v, k)[k])


def align_depth_median(pred, gt, mask=None):
    """Rescale pred so its masked median matches the ground truth's.

    Returns (aligned prediction, scale); scale = median(gt) / median(pred).
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
        raise DataError("empty mask for median alignment")
    med_p = lower_median(p[mask])
    med_g = lower_median(g[mask])
    if med_p <= 0.0 or med_g <= 0.0:
        raise DataError("degenerate input: masked depth median must be positive")
    scale = med_g / med_p
    return p * scale, float(scale)
