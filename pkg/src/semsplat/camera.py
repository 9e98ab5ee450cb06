"""Pinhole camera with a rigid world-to-camera pose."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

ROTATION_TOL = 1e-6


def _check_rotation(R: np.ndarray, tol: float = ROTATION_TOL) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise DataError(f"R must be 3x3, got {R.shape}")
    if not np.all(np.isfinite(R)):
        raise DataError("R contains non-finite values")
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol:
        raise DataError("R is not orthonormal within 1e-6")
    if np.linalg.det(R) < 0.0:
        raise DataError("R must have determinant +1")
    return R


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise DataError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise DataError("focal lengths must be positive")


@dataclass(frozen=True)
class Camera:
    """Intrinsics + image size + world-to-camera rigid transform [R|t].

    A world point X maps to camera coordinates R X + t; pixel coordinates
    are (fx x/z + cx, fy y/z + cy).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise DataError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise DataError("focal lengths must be positive")
        w, h = int(self.width), int(self.height)
        if w < 1 or h < 1:
            raise DataError("image size must be positive")
        object.__setattr__(self, "width", w)
        object.__setattr__(self, "height", h)
        R = _check_rotation(self.R)
        t = np.asarray(self.t, dtype=np.float64)
        if t.shape != (3,):
            raise DataError(f"t must have shape (3,), got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise DataError("t contains non-finite values")
        Rf = np.array(R, copy=True)
        Rf.flags.writeable = False
        tf = np.array(t, copy=True)
        tf.flags.writeable = False
        object.__setattr__(self, "R", Rf)
        object.__setattr__(self, "t", tf)

    @property
    def intrinsics(self) -> Intrinsics:
        return Intrinsics(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates, -R^T t."""
        return -self.R.T @ self.t

    def world_to_cam(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return np.einsum("ij,...j->...i", self.R, pts) + self.t

    def cam_to_world(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return np.einsum("ji,...j->...i", self.R, pts - self.t)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "R": [float(v) for v in self.R.reshape(-1)],
            "t": [float(v) for v in self.t],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        required = {"fx", "fy", "cx", "cy", "width", "height", "R", "t"}
        missing = required - set(d)
        if missing:
            raise DataError(f"camera dict missing keys: {sorted(missing)}")
        R = np.asarray(d["R"], dtype=np.float64)
        if R.size != 9:
            raise DataError("camera R must have 9 entries (row-major)")
        t = np.asarray(d["t"], dtype=np.float64)
        if t.size != 3:
            raise DataError("camera t must have 3 entries")
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
            R=R.reshape(3, 3),
            t=t.reshape(3),
        )
