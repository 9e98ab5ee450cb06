"""Real spherical harmonics up to degree 3.

Band-major ordering: l ascending, m = -l..l within a band, so a degree-K
basis has (K + 1)^2 entries. Constants follow the standard orthonormal real
SH table (all positive; signs live in the polynomials). On the unit sphere
the Cartesian polynomials below agree with the usual (theta, phi) forms.

Each basis entry is evaluated as a polynomial in (x, y, z); off the sphere
this is one particular smooth extension, which is all the gradient path
needs since radial components are projected out by the direction Jacobian
(I - d d^T) / r.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import DataError

MAX_DEGREE = 3

# 1 / (2 sqrt(pi))
SH_C0 = 0.28209479177387814
# sqrt(3 / (4 pi))
SH_C1 = 0.4886025119029199
# (1/2) sqrt(15/pi), (1/4) sqrt(5/pi), (1/4) sqrt(15/pi)
SH_C2_XY = 1.0925484305920792
SH_C2_Z2 = 0.31539156525252005
SH_C2_X2Y2 = 0.5462742152960396
# (1/4) sqrt(35/(2 pi)), (1/2) sqrt(105/pi), (1/4) sqrt(21/(2 pi)),
# (1/4) sqrt(7/pi), (1/4) sqrt(105/pi)
SH_C3_A = 0.5900435899266435
SH_C3_XYZ = 2.890611442640554
SH_C3_B = 0.4570457994644658
SH_C3_Z3 = 0.3731763325901154
SH_C3_ZX2Y2 = 1.445305721320277


def basis_size(degree: int) -> int:
    """Number of basis functions for a max degree, (degree + 1)^2."""
    _check_degree(degree)
    return (degree + 1) ** 2


def _check_degree(degree: int) -> None:
    if not isinstance(degree, (int, np.integer)):
        raise DataError(f"sh degree must be an integer, got {type(degree).__name__}")
    if degree < 0 or degree > MAX_DEGREE:
        raise DataError(f"sh degree must be in [0, {MAX_DEGREE}], got {degree}")


def _check_directions(direction: np.ndarray) -> np.ndarray:
    d = np.asarray(direction, dtype=np.float64)
    if d.shape[-1] != 3:
        raise DataError(f"direction must have trailing dim 3, got shape {d.shape}")
    if not np.all(np.isfinite(d)):
        raise DataError("direction contains non-finite values")
    norms = np.linalg.norm(d, axis=-1)
    if np.any(norms == 0.0):
        raise DataError("zero direction vector")
    if np.any(np.abs(norms - 1.0) > 1e-6):
        warnings.warn("non-unit direction passed to sh basis; normalizing", stacklevel=3)
        d = d / norms[..., None]
    return d


def eval_basis(direction: np.ndarray, degree: int) -> np.ndarray:
    """Evaluate the real SH basis at unit direction(s).

    Args:
        direction: (..., 3) unit vectors. Non-unit inputs are normalized
            with a warning; zero vectors are an error.
        degree: max band, 0..3.

    Returns:
        (..., (degree+1)^2) float64 basis values, band-major.
    """
    _check_degree(degree)
    d = _check_directions(direction)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    out = np.empty(d.shape[:-1] + (basis_size(degree),), dtype=np.float64)
    out[..., 0] = SH_C0
    if degree >= 1:
        out[..., 1] = SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = SH_C1 * x
    if degree >= 2:
        out[..., 4] = SH_C2_XY * x * y
        out[..., 5] = SH_C2_XY * y * z
        out[..., 6] = SH_C2_Z2 * (3.0 * z * z - 1.0)
        out[..., 7] = SH_C2_XY * x * z
        out[..., 8] = SH_C2_X2Y2 * (x * x - y * y)
    if degree >= 3:
        out[..., 9] = SH_C3_A * y * (3.0 * x * x - y * y)
        out[..., 10] = SH_C3_XYZ * x * y * z
        out[..., 11] = SH_C3_B * y * (5.0 * z * z - 1.0)
        out[..., 12] = SH_C3_Z3 * z * (5.0 * z * z - 3.0)
        out[..., 13] = SH_C3_B * x * (5.0 * z * z - 1.0)
        out[..., 14] = SH_C3_ZX2Y2 * z * (x * x - y * y)
        out[..., 15] = SH_C3_A * x * (x * x - 3.0 * y * y)
    return out


def eval_basis_grad(direction: np.ndarray, degree: int) -> np.ndarray:
    """Formal gradient d basis / d (x, y, z) of the polynomial extension.

    Returns (..., (degree+1)^2, 3). Callers chasing gradients through a
    normalized direction must project with (I - d d^T) / r themselves.
    """
    _check_degree(degree)
    d = _check_directions(direction)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    k = basis_size(degree)
    g = np.zeros(d.shape[:-1] + (k, 3), dtype=np.float64)
    if degree >= 1:
        g[..., 1, 1] = SH_C1
        g[..., 2, 2] = SH_C1
        g[..., 3, 0] = SH_C1
    if degree >= 2:
        g[..., 4, 0] = SH_C2_XY * y
        g[..., 4, 1] = SH_C2_XY * x
        g[..., 5, 1] = SH_C2_XY * z
        g[..., 5, 2] = SH_C2_XY * y
        g[..., 6, 2] = SH_C2_Z2 * 6.0 * z
        g[..., 7, 0] = SH_C2_XY * z
        g[..., 7, 2] = SH_C2_XY * x
        g[..., 8, 0] = SH_C2_X2Y2 * 2.0 * x
        g[..., 8, 1] = SH_C2_X2Y2 * (-2.0) * y
    if degree >= 3:
        g[..., 9, 0] = SH_C3_A * 6.0 * x * y
        g[..., 9, 1] = SH_C3_A * 3.0 * (x * x - y * y)
        g[..., 10, 0] = SH_C3_XYZ * y * z
        g[..., 10, 1] = SH_C3_XYZ * x * z
        g[..., 10, 2] = SH_C3_XYZ * x * y
        g[..., 11, 1] = SH_C3_B * (5.0 * z * z - 1.0)
        g[..., 11, 2] = SH_C3_B * 10.0 * y * z
        g[..., 12, 2] = SH_C3_Z3 * (15.0 * z * z - 3.0)
        g[..., 13, 0] = SH_C3_B * (5.0 * z * z - 1.0)
        g[..., 13, 2] = SH_C3_B * 10.0 * x * z
        g[..., 14, 0] = SH_C3_ZX2Y2 * 2.0 * x * z
        g[..., 14, 1] = SH_C3_ZX2Y2 * (-2.0) * y * z
        g[..., 14, 2] = SH_C3_ZX2Y2 * (x * x - y * y)
        g[..., 15, 0] = SH_C3_A * 3.0 * (x * x - y * y)
        g[..., 15, 1] = SH_C3_A * (-6.0) * x * y
    return g
