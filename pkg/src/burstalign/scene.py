"""Plane-map scene parameterization and the plane-induced homography flow.

A plane map stores one non-unit normal ``n`` per grid cell; the plane is
``{y : n . y = 1}`` in reference-camera coordinates, so ``n . [u, 1]`` is
the disparity (inverse depth) seen through normalized point ``u``.
The flow of a pixel into view k follows ``psi((R + t n^T) [u, 1])``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgproc import resize_bilinear
from .liegroup import RigidMotion

MIN_DEPTH_DENOM = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, factor: float) -> "Intrinsics":
        """Intrinsics of the image block-downsampled by ``factor``."""
        f = float(factor)
        w = None if self.width is None else int(round(self.width / f))
        h = None if self.height is None else int(round(self.height / f))
        return Intrinsics(self.fx / f, self.fy / f,
                          (self.cx + 0.5) / f - 0.5, (self.cy + 0.5) / f - 0.5, w, h)

    def for_shape(self, shape) -> "Intrinsics":
        """Intrinsics for a pixel grid of ``shape`` covering the same field of view."""
        if self.width is None or (shape[1] == self.width and shape[0] == self.height):
            return self
        return self.scaled(self.width / shape[1])

    def to_normalized(self, x, y):
        return (np.asarray(x) - self.cx) / self.fx, (np.asarray(y) - self.cy) / self.fy

    def to_pixel(self, u, v):
        return np.asarray(u) * self.fx + self.cx, np.asarray(v) * self.fy + self.cy

    def rays(self, shape) -> np.ndarray:
        """Homogeneous normalized coordinates ``[u, v, 1]`` of every pixel, ``(H, W, 3)``."""
        h, w = shape[:2]
        y, x = np.mgrid[0:h, 0:w].astype(float)
        u, v = self.to_normalized(x, y)
        return np.stack([u, v, np.ones_like(u)], axis=-1)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   d.get("width"), d.get("height"))


@dataclass(frozen=True)
class PlaneMap:
    normals: np.ndarray  # (rows, cols, 3)
    level: int = 0

    def __post_init__(self):
        n = np.asarray(self.normals, dtype=float)
        if n.ndim != 3 or n.shape[2] != 3:
            raise ValueError(f"normals must be (rows, cols, 3), got {n.shape}")
        if not np.all(np.isfinite(n)):
            raise ValueError("plane map has non-finite entries")
        object.__setattr__(self, "normals", n)

    @property
    def shape(self):
        return self.normals.shape[:2]

    def scaled(self, lam: float) -> "PlaneMap":
        return PlaneMap(self.normals * lam, self.level)


def init_from_depth(coarse_depth: np.ndarray) -> PlaneMap:
    """Fronto-parallel planes ``n = (0, 0, 1/z)``."""
    z = np.asarray(coarse_depth, dtype=float)
    if z.ndim != 2:
        raise ValueError("depth map must be 2-D")
    if not np.all(z > 0):
        raise ValueError("initial depth must be positive everywhere")
    n = np.zeros(z.shape + (3,))
    n[..., 2] = 1.0 / z
    return PlaneMap(n, level=0)


def upsample(pm: PlaneMap) -> PlaneMap:
    rows, cols = pm.shape
    return PlaneMap(resize_bilinear(pm.normals, (2 * rows, 2 * cols)), pm.level + 1)


def resample(pm: PlaneMap, shape) -> PlaneMap:
    if tuple(shape[:2]) == pm.shape:
        return pm
    return PlaneMap(resize_bilinear(pm.normals, shape[:2]), pm.level)


def disparity(pm: PlaneMap, K: Intrinsics) -> np.ndarray:
    """``n . [u, 1]`` at every cell center of the plane-map grid."""
    return np.einsum("hwc,hwc->hw", pm.normals, K.rays(pm.shape))


def warp_rays(p: np.ndarray, d: np.ndarray, R: np.ndarray, t: np.ndarray) -> np.ndarray:
    """``R p + d t`` for rays ``p`` (..., 3) with disparities ``d`` (...)."""
    return p @ R.T + d[..., None] * t


def project(Q: np.ndarray) -> np.ndarray:
    z = np.where(np.abs(Q[..., 2]) < MIN_DEPTH_DENOM, MIN_DEPTH_DENOM, Q[..., 2])
    return Q[..., :2] / z[..., None]


def homography_flow(pm: PlaneMap, pose: RigidMotion, K: Intrinsics):
    """Flow of every plane-map cell center into the view at ``pose``.

    ``K`` must describe the plane-map grid. Returns ``(flow, valid)``:
    ``flow`` is ``(rows, cols, 2)`` in pixels, ``valid`` is False where the
    transformed point lies behind the camera.
    """
    p = K.rays(pm.shape)
    d = np.einsum("hwc,hwc->hw", pm.normals, p)
    Q = warp_rays(p, d, pose.R, pose.t)
    valid = Q[..., 2] > MIN_DEPTH_DENOM
    w = project(Q)
    x, y = K.to_pixel(w[..., 0], w[..., 1])
    gy, gx = np.mgrid[0:pm.shape[0], 0:pm.shape[1]].astype(float)
    flow = np.stack([x - gx, y - gy], axis=-1)
    return flow, valid


def plane_to_depth(pm: PlaneMap, K: Intrinsics, shape=None) -> np.ndarray:
    """Depth ``1 / (n . [u, 1])`` after bilinear resampling to ``shape``."""
    shape = pm.shape if shape is None else tuple(shape[:2])
    pm = resample(pm, shape)
    d = disparity(pm, K.for_shape(shape))
    if not np.all(d > 0):
        raise ValueError("plane map puts some points at non-positive depth")
    return 1.0 / d


def plane_to_normals(pm: PlaneMap, shape=None) -> np.ndarray:
    shape = pm.shape if shape is None else tuple(shape[:2])
    n = resample(pm, shape).normals
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ValueError("zero normal vector in plane map")
    return n / norm
