"""Synthetic scenes, cameras, and point maps.

These builders feed the test suite, the selftest command, and the example
scripts. The gradcheck variants keep every primitive away from the
non-smooth corners of the renderer (color clamp saturation, the opacity
cap, the transmittance cutoff, frustum culling), so central differences
with steps around 1e-5 see a locally smooth function.
"""

from __future__ import annotations

import numpy as np

from .camera import Camera
from .field import SemanticGaussianField
from .pointmap import PointMap
from .sh import SH_C0

# Gradcheck scenes cap opacity at sigmoid(0) = 0.5 so that with at most
# ten primitives per pixel the transmittance floor 1e-4 stays far below
# the reachable minimum 0.5^10 ~ 9.8e-4.
GRADCHECK_LOGIT_RANGE = (-2.0, 0.0)
GRADCHECK_BASE_RANGE = (0.15, 0.85)
GRADCHECK_BAND_AMPLITUDE = 0.005


def random_field(
    rng: np.random.Generator,
    count: int,
    sh_degree: int = 3,
    feature_dim: int = 8,
    *,
    depth_range: tuple[float, float] = (2.0, 6.0),
    spread: float = 1.5,
    logit_range: tuple[float, float] = (-2.0, 2.0),
    log_scale_range: tuple[float, float] = (-1.6, -0.7),
    base_range: tuple[float, float] = (0.1, 0.9),
    band_amplitude: float = 0.02,
) -> SemanticGaussianField:
    """Draw a field in front of the canonical camera (z in depth_range)."""
    k = (sh_degree + 1) ** 2
    centers = np.empty((count, 3))
    centers[:, 0] = rng.uniform(-spread, spread, count)
    centers[:, 1] = rng.uniform(-spread, spread, count)
    centers[:, 2] = rng.uniform(depth_range[0], depth_range[1], count)
    log_scales = rng.uniform(log_scale_range[0], log_scale_range[1], (count, 3))
    rotations = rng.normal(size=(count, 4))
    opacity_logits = rng.uniform(logit_range[0], logit_range[1], count)
    sh = np.zeros((count, 3, k))
    sh[:, :, 0] = rng.uniform(base_range[0], base_range[1], (count, 3)) / SH_C0
    if k > 1:
        sh[:, :, 1:] = rng.uniform(-band_amplitude, band_amplitude, (count, 3, k - 1))
    semantics = rng.uniform(-1.0, 1.0, (count, feature_dim))
    return SemanticGaussianField.from_arrays(
        centers=centers,
        log_scales=log_scales,
        rotations=rotations,
        opacity_logits=opacity_logits,
        sh_coeffs=sh,
        semantics=semantics,
    )


def canonical_camera(width: int = 8, height: int = 8, focal: float | None = None) -> Camera:
    """Identity-pose camera with the principal point at the image center."""
    f = float(focal) if focal is not None else 1.2 * max(width, height)
    return Camera(
        fx=f,
        fy=f,
        cx=width / 2.0,
        cy=height / 2.0,
        width=width,
        height=height,
        R=np.eye(3),
        t=np.zeros(3),
    )


def look_at_camera(
    eye,
    target,
    focal: float,
    width: int,
    height: int,
    up=(0.0, 1.0, 0.0),
) -> Camera:
    """Camera at eye with +z (camera frame) toward target."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    nf = np.linalg.norm(forward)
    if nf < 1e-12:
        raise ValueError("eye and target coincide")
    forward = forward / nf
    right = np.cross(np.asarray(up, dtype=np.float64), forward)
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        raise ValueError("up is parallel to the viewing direction")
    right = right / nr
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    return Camera(
        fx=focal,
        fy=focal,
        cx=width / 2.0,
        cy=height / 2.0,
        width=width,
        height=height,
        R=R,
        t=-R @ eye,
    )


def gradcheck_scene(
    seed: int,
    count: int = 6,
    width: int = 8,
    height: int = 8,
    feature_dim: int = 4,
    sh_degree: int | None = None,
):
    """A small field + camera pair safe for finite-difference probing.

    Opacities stay in (0.12, 0.5), base colors in (0.15, 0.85) with tiny
    higher bands, and depths well past the near plane. Images up to 16x16
    fit in a single tile, so footprint truncation at tile granularity
    cannot flip membership under a 1e-5 nudge of any parameter.
    """
    if count > 10:
        raise ValueError("gradcheck scenes support at most 10 primitives")
    rng = np.random.default_rng(seed)
    degree = int(rng.integers(0, 4)) if sh_degree is None else sh_degree
    field = random_field(
        rng,
        count,
        sh_degree=degree,
        feature_dim=feature_dim,
        depth_range=(2.5, 5.0),
        spread=0.6,
        logit_range=GRADCHECK_LOGIT_RANGE,
        log_scale_range=(-1.3, -0.6),
        base_range=GRADCHECK_BASE_RANGE,
        band_amplitude=GRADCHECK_BAND_AMPLITUDE,
    )
    camera = canonical_camera(width, height)
    background = rng.uniform(0.2, 0.8, 3)
    return field, camera, background


def pointmap_from_depth(depth, focal: float) -> np.ndarray:
    """Back-project a depth image into camera-frame points.

    Pixel (r, c) maps through centered integer coordinates
    (c - W/2, r - H/2), the same convention the focal and pose estimators
    assume, so a round trip through them is exact on clean data.
    """
    z = np.asarray(depth, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError(f"depth must be H x W, got shape {z.shape}")
    h, w = z.shape
    rows, cols = np.mgrid[0:h, 0:w]
    x = (cols - w / 2.0) * z / focal
    y = (rows - h / 2.0) * z / focal
    return np.stack([x, y, z], axis=-1)


def pixel_grid(width: int, height: int) -> np.ndarray:
    """Integer (x, y) pixel coordinates, shape (H, W, 2)."""
    rows, cols = np.mgrid[0:height, 0:width]
    return np.stack([cols, rows], axis=-1).astype(np.float64)


def two_view_scene(seed: int, count: int = 40, width: int = 48, height: int = 36):
    """A field observed from two cameras, for pose-recovery round trips.

    Returns (field, cam1, cam2) where cam1 has identity pose, so the
    world frame coincides with view 1's camera frame.
    """
    rng = np.random.default_rng(seed)
    field = random_field(
        rng,
        count,
        sh_degree=2,
        feature_dim=8,
        depth_range=(3.0, 7.0),
        spread=1.8,
        logit_range=(0.5, 2.5),
        log_scale_range=(-1.2, -0.5),
    )
    cam1 = canonical_camera(width, height)
    eye = np.array([0.5, -0.3, -0.4]) + rng.uniform(-0.1, 0.1, 3)
    target = np.array([0.0, 0.0, 4.5])
    cam2 = look_at_camera(eye, target, cam1.fx, width, height)
    return field, cam1, cam2


def render_pointmaps(field, cam1: Camera, cam2: Camera, *, threads: int = 1):
    """Render both views and lift their depths into view-1 aligned points.

    Returns (out1, out2, pm1, pm2): pm1 holds view-1 points in the view-1
    frame, pm2 holds view-2 points expressed in the view-1 frame, with
    confidence 1 + alpha and masks where alpha > 0.5.
    """
    from .rasterizer import render_forward

    out1 = render_forward(field, cam1, np.zeros(3), threads=threads)
    out2 = render_forward(field, cam2, np.zeros(3), threads=threads)
    pts1_cam = pointmap_from_depth(out1.depth, cam1.fx)
    pts2_cam = pointmap_from_depth(out2.depth, cam2.fx)
    pts2_world = cam2.cam_to_world(pts2_cam.reshape(-1, 3)).reshape(pts2_cam.shape)
    pts1_world = cam1.cam_to_world(pts1_cam.reshape(-1, 3)).reshape(pts1_cam.shape)
    pm1 = PointMap(points=pts1_world, confidence=1.0 + out1.alpha, mask=out1.alpha > 0.5)
    pm2 = PointMap(points=pts2_world, confidence=1.0 + out2.alpha, mask=out2.alpha > 0.5)
    return out1, out2, pm1, pm2
