"""Pixel-aligned 3D point maps with confidence and validity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class PointMap:
    """Per-pixel 3D points P with confidence M >= 1 and validity mask D.

    Points for view v are expressed in the reference (view-1) frame.
    Pixels with mask False take part in no sums anywhere in the package.
    """

    points: np.ndarray
    confidence: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.points, dtype=np.float64)
        if P.ndim != 3 or P.shape[2] != 3:
            raise DataError(f"points must have shape (H, W, 3), got {P.shape}")
        if not np.all(np.isfinite(P)):
            raise DataError("points contain non-finite values")
        h, w = P.shape[:2]
        M = np.asarray(self.confidence, dtype=np.float64)
        if M.shape != (h, w):
            raise DataError(f"confidence must have shape {(h, w)}, got {M.shape}")
        if not np.all(np.isfinite(M)):
            raise DataError("confidence contains non-finite values")
        if np.any(M < 1.0):
            raise DataError("confidence must satisfy M >= 1 everywhere")
        D = np.asarray(self.mask)
        if D.shape != (h, w):
            raise DataError(f"mask must have shape {(h, w)}, got {D.shape}")
        D = D.astype(bool)
        for name, arr in (("points", P), ("confidence", M), ("mask", D)):
            a = np.array(arr, copy=True)
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @property
    def shape(self) -> tuple:
        return self.points.shape[:2]

    @property
    def valid_count(self) -> int:
        return int(self.mask.sum())

    @classmethod
    def full(cls, points: np.ndarray, confidence: np.ndarray | None = None, mask: np.ndarray | None = None) -> "PointMap":
        """PointMap with defaults: confidence 1 everywhere, all pixels valid."""
        P = np.asarray(points, dtype=np.float64)
        if P.ndim != 3 or P.shape[2] != 3:
            raise DataError(f"points must have shape (H, W, 3), got {P.shape}")
        h, w = P.shape[:2]
        if confidence is None:
            confidence = np.ones((h, w))
        if mask is None:
            mask = np.ones((h, w), dtype=bool)
        return cls(points=P, confidence=confidence, mask=mask)
