"""Semantic anisotropic Gaussian primitives.

A Gaussian carries geometry (center, log-scale, quaternion), appearance
(spherical-harmonic coefficients per RGB channel), an opacity logit, and an
N-dimensional semantic embedding. Parameterization is unconstrained on
purpose: scale is stored as log, opacity as logit, and quaternions are
normalized at construction, so downstream gradient checks never hit box
boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sh
from .errors import DataError

QUAT_NORM_FLOOR = 1e-8


def _validated(x, shape, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.shape != shape:
        raise DataError(f"{name} must have shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DataError(f"{name} contains non-finite values")
    return a


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PointPrimitive:
    """A colored 3D point (x, y, z, r, g, b)."""

    position: np.ndarray
    color: np.ndarray

    def __post_init__(self):
        pos = _validated(self.position, (3,), "position")
        col = _validated(self.color, (3,), "color")
        if np.any(col < 0.0) or np.any(col > 1.0):
            raise DataError("color components must lie in [0, 1]")
        object.__setattr__(self, "position", _frozen(pos))
        object.__setattr__(self, "color", _frozen(col))


def normalize_quaternion(q: np.ndarray) -> np.ndarray:
    """Return q / |q|; near-zero quaternions are a degenerate rotation."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1)
    if np.any(n <= QUAT_NORM_FLOOR):
        raise DataError("degenerate rotation: quaternion norm below 1e-8")
    return q / n[..., None]


def rotation_matrix_from_quaternion(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for unit quaternions (w, x, y, z); shape (..., 3, 3).

    Input is normalized first (degenerate norm is an error).
    """
    qn = normalize_quaternion(q)
    w, x, y, z = qn[..., 0], qn[..., 1], qn[..., 2], qn[..., 3]
    R = np.empty(qn.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[..., 0, 1] = 2.0 * (x * y - w * z)
    R[..., 0, 2] = 2.0 * (x * z + w * y)
    R[..., 1, 0] = 2.0 * (x * y + w * z)
    R[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[..., 1, 2] = 2.0 * (y * z - w * x)
    R[..., 2, 0] = 2.0 * (x * z - w * y)
    R[..., 2, 1] = 2.0 * (y * z + w * x)
    R[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


def rotation_partials_wrt_quaternion(qn: np.ndarray) -> np.ndarray:
    """dR/dq for the unit-quaternion formula, shape (..., 4, 3, 3).

    Partials of the rotation matrix entries w.r.t. the four quaternion
    components, evaluated at qn (assumed unit; callers own the
    normalization Jacobian (I - qq^T)/|q|).
    """
    qn = np.asarray(qn, dtype=np.float64)
    w, x, y, z = qn[..., 0], qn[..., 1], qn[..., 2], qn[..., 3]
    P = np.zeros(qn.shape[:-1] + (4, 3, 3), dtype=np.float64)
    # d/dw
    P[..., 0, 0, 1] = -2.0 * z
    P[..., 0, 0, 2] = 2.0 * y
    P[..., 0, 1, 0] = 2.0 * z
    P[..., 0, 1, 2] = -2.0 * x
    P[..., 0, 2, 0] = -2.0 * y
    P[..., 0, 2, 1] = 2.0 * x
    # d/dx
    P[..., 1, 0, 1] = 2.0 * y
    P[..., 1, 0, 2] = 2.0 * z
    P[..., 1, 1, 0] = 2.0 * y
    P[..., 1, 1, 1] = -4.0 * x
    P[..., 1, 1, 2] = -2.0 * w
    P[..., 1, 2, 0] = 2.0 * z
    P[..., 1, 2, 1] = 2.0 * w
    P[..., 1, 2, 2] = -4.0 * x
    # d/dy
    P[..., 2, 0, 0] = -4.0 * y
    P[..., 2, 0, 1] = 2.0 * x
    P[..., 2, 0, 2] = 2.0 * w
    P[..., 2, 1, 0] = 2.0 * x
    P[..., 2, 1, 2] = 2.0 * z
    P[..., 2, 2, 0] = -2.0 * w
    P[..., 2, 2, 1] = 2.0 * z
    P[..., 2, 2, 2] = -4.0 * y
    # d/dz
    P[..., 3, 0, 0] = -4.0 * z
    P[..., 3, 0, 1] = -2.0 * w
    P[..., 3, 0, 2] = 2.0 * x
    P[..., 3, 1, 0] = 2.0 * w
    P[..., 3, 1, 1] = -4.0 * z
    P[..., 3, 1, 2] = 2.0 * y
    P[..., 3, 2, 0] = 2.0 * x
    P[..., 3, 2, 1] = 2.0 * y
    return P


def covariance_from_scale_rotation(log_scale: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    """3D covariance R diag(exp(s))^2 R^T from log-scale and quaternion.

    Always symmetric PSD; eigenvalues are exp(2 s) up to rotation.
    """
    s = _validated(log_scale, (3,), "log_scale")
    q = _validated(rotation, (4,), "rotation")
    R = rotation_matrix_from_quaternion(q)
    var = np.exp(2.0 * s)
    cov = (R * var[None, :]) @ R.T
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class SemanticGaussian:
    """One anisotropic Gaussian with appearance and semantic embedding.

    Fields:
        center: (3,) world position.
        log_scale: (3,) log of per-axis standard deviation.
        rotation: (4,) quaternion (w, x, y, z); normalized at construction.
        opacity_logit: scalar; activated opacity = sigmoid(logit).
        sh_coeffs: (3, k) SH coefficients per RGB channel, k = (K+1)^2.
        semantic: (N,) embedding.
    """

    center: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    sh_coeffs: np.ndarray
    semantic: np.ndarray

    def __post_init__(self):
        center = _validated(self.center, (3,), "center")
        log_scale = _validated(self.log_scale, (3,), "log_scale")
        q = _validated(self.rotation, (4,), "rotation")
        q = normalize_quaternion(q)
        logit = float(self.opacity_logit)
        if not np.isfinite(logit):
            raise DataError("opacity_logit must be finite")
        coeffs = np.asarray(self.sh_coeffs, dtype=np.float64)
        if coeffs.ndim != 2 or coeffs.shape[0] != 3:
            raise DataError(f"sh_coeffs must have shape (3, k), got {coeffs.shape}")
        k = coeffs.shape[1]
        if k not in {(d + 1) ** 2 for d in range(sh.MAX_DEGREE + 1)}:
            raise DataError(f"sh_coeffs column count {k} is not (K+1)^2 for K in [0, {sh.MAX_DEGREE}]")
        if not np.all(np.isfinite(coeffs)):
            raise DataError("sh_coeffs contains non-finite values")
        sem = np.asarray(self.semantic, dtype=np.float64)
        if sem.ndim != 1 or sem.shape[0] < 1:
            raise DataError(f"semantic must be a non-empty vector, got shape {sem.shape}")
        if not np.all(np.isfinite(sem)):
            raise DataError("semantic contains non-finite values")
        object.__setattr__(self, "center", _frozen(center))
        object.__setattr__(self, "log_scale", _frozen(log_scale))
        object.__setattr__(self, "rotation", _frozen(q))
        object.__setattr__(self, "opacity_logit", logit)
        object.__setattr__(self, "sh_coeffs", _frozen(coeffs))
        object.__setattr__(self, "semantic", _frozen(sem))

    @property
    def sh_degree(self) -> int:
        return int(round(np.sqrt(self.sh_coeffs.shape[1]))) - 1

    @property
    def feature_dim(self) -> int:
        return self.semantic.shape[0]

    @property
    def opacity(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.opacity_logit)))

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    def covariance(self) -> np.ndarray:
        return covariance_from_scale_rotation(self.log_scale, self.rotation)


def color_from_sh(g: SemanticGaussian, direction: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Shade a Gaussian toward a unit view direction: c(d) = sum_i c_i B_i(d).

    The shaded color is clamped componentwise to [0, 1]; pass clamp=False
    for the raw SH sum.
    """
    basis = sh.eval_basis(direction, g.sh_degree)
    c = g.sh_coeffs @ basis
    if clamp:
        c = np.clip(c, 0.0, 1.0)
    return c


@dataclass(frozen=True)
class SemanticGaussianField:
    """An ordered collection of Gaussians sharing SH degree and feature dim."""

    gaussians: tuple
    sh_degree: int
    feature_dim: int

    def __post_init__(self):
        gs = tuple(self.gaussians)
        if not isinstance(self.sh_degree, (int, np.integer)) or not (0 <= self.sh_degree <= sh.MAX_DEGREE):
            raise DataError(f"sh_degree must be an integer in [0, {sh.MAX_DEGREE}], got {self.sh_degree}")
        if not isinstance(self.feature_dim, (int, np.integer)) or self.feature_dim < 1:
            raise DataError(f"feature_dim must be a positive integer, got {self.feature_dim}")
        for i, g in enumerate(gs):
            if not isinstance(g, SemanticGaussian):
                raise DataError(f"gaussians[{i}] is not a SemanticGaussian")
            if g.sh_degree != self.sh_degree:
                raise DataError(f"gaussians[{i}] has sh degree {g.sh_degree}, field declares {self.sh_degree}")
            if g.feature_dim != self.feature_dim:
                raise DataError(f"gaussians[{i}] has feature dim {g.feature_dim}, field declares {self.feature_dim}")
        object.__setattr__(self, "gaussians", gs)
        object.__setattr__(self, "sh_degree", int(self.sh_degree))
        object.__setattr__(self, "feature_dim", int(self.feature_dim))

    def __len__(self) -> int:
        return len(self.gaussians)

    def __iter__(self):
        return iter(self.gaussians)

    @property
    def basis_size(self) -> int:
        return (self.sh_degree + 1) ** 2

    @classmethod
    def from_arrays(
        cls,
        centers: np.ndarray,
        log_scales: np.ndarray,
        rotations: np.ndarray,
        opacity_logits: np.ndarray,
        sh_coeffs: np.ndarray,
        semantics: np.ndarray,
    ) -> "SemanticGaussianField":
        """Build a field from stacked parameter arrays.

        Shapes: (n,3), (n,3), (n,4), (n,), (n,3,k), (n,N). Degree and
        feature dim are inferred from the trailing dims; n may be 0, in
        which case sh_coeffs/semantics still carry k and N.
        """
        centers = np.asarray(centers, dtype=np.float64)
        sh_coeffs = np.asarray(sh_coeffs, dtype=np.float64)
        semantics = np.asarray(semantics, dtype=np.float64)
        if centers.ndim != 2 or centers.shape[1] != 3:
            raise DataError(f"centers must have shape (n, 3), got {centers.shape}")
        if sh_coeffs.ndim != 3 or sh_coeffs.shape[1] != 3:
            raise DataError(f"sh_coeffs must have shape (n, 3, k), got {sh_coeffs.shape}")
        if semantics.ndim != 2:
            raise DataError(f"semantics must have shape (n, N), got {semantics.shape}")
        k = sh_coeffs.shape[2]
        degree = int(round(np.sqrt(k))) - 1
        if (degree + 1) ** 2 != k or not (0 <= degree <= sh.MAX_DEGREE):
            raise DataError(f"sh_coeffs column count {k} is not a valid (K+1)^2")
        n_dim = semantics.shape[1]
        if n_dim < 1:
            raise DataError("semantics must have at least one channel")
        log_scales = np.asarray(log_scales, dtype=np.float64)
        rotations = np.asarray(rotations, dtype=np.float64)
        opacity_logits = np.asarray(opacity_logits, dtype=np.float64).reshape(-1)
        n = centers.shape[0]
        gs = tuple(
            SemanticGaussian(
                center=centers[i],
                log_scale=log_scales[i],
                rotation=rotations[i],
                opacity_logit=float(opacity_logits[i]),
                sh_coeffs=sh_coeffs[i],
                semantic=semantics[i],
            )
            for i in range(n)
        )
        return cls(gaussians=gs, sh_degree=degree, feature_dim=n_dim)

    def to_arrays(self) -> dict:
        """Stack parameters into a dict of arrays (keys match from_arrays)."""
        n = len(self.gaussians)
        k = self.basis_size
        out = {
            "centers": np.zeros((n, 3)),
            "log_scales": np.zeros((n, 3)),
            "rotations": np.zeros((n, 4)),
            "opacity_logits": np.zeros((n,)),
            "sh_coeffs": np.zeros((n, 3, k)),
            "semantics": np.zeros((n, self.feature_dim)),
        }
        for i, g in enumerate(self.gaussians):
            out["centers"][i] = g.center
            out["log_scales"][i] = g.log_scale
            out["rotations"][i] = g.rotation
            out["opacity_logits"][i] = g.opacity_logit
            out["sh_coeffs"][i] = g.sh_coeffs
            out["semantics"][i] = g.semantic
        return out
