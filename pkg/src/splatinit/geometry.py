"""Pinhole cameras, depth backprojection and scene scale.

Pixel convention: ``(i, j) = (column, row)`` with pixel centres at integer
coordinates. COLMAP's half-pixel offset is removed in :mod:`splatinit.io`.
Arrays indexed by pixel are stored row-major as ``[row, column]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidInputError

log = logging.getLogger(__name__)

BEHIND_EPS = 1e-12


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Camera:
    """World-to-camera pinhole model: ``x_cam = R @ X + t``."""

    id: int
    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        K, R, t = _frozen(self.K), _frozen(self.R), _frozen(self.t).reshape(3)
        if K.shape != (3, 3) or R.shape != (3, 3):
            raise InvalidInputError(f"camera {self.id}: K and R must be 3x3")
        if not (np.isfinite(K).all() and np.isfinite(R).all() and np.isfinite(t).all()):
            raise InvalidInputError(f"camera {self.id}: non-finite intrinsics or pose")
        if K[1, 0] != 0 or K[2, 0] != 0 or K[2, 1] != 0 or K[2, 2] != 1:
            raise InvalidInputError(f"camera {self.id}: K must be upper-triangular with K[2,2]=1")
        if not (K[0, 0] > 0 and K[1, 1] > 0):
            raise InvalidInputError(f"camera {self.id}: focal lengths must be positive")
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1) > 1e-9:
            raise InvalidInputError(f"camera {self.id}: R is not a proper rotation")
        if int(self.width) < 1 or int(self.height) < 1:
            raise InvalidInputError(f"camera {self.id}: image size must be positive")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @cached_property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    @cached_property
    def P(self) -> np.ndarray:
        return self.K @ np.c_[self.R, self.t]

    @property
    def K_inv(self) -> np.ndarray:
        return np.linalg.inv(self.K)

    def contains(self, pixel) -> np.ndarray:
        """True where a (sub-)pixel lies inside the image footprint."""
        p = np.asarray(pixel, dtype=np.float64)
        return (
            (p[..., 0] >= -0.5) & (p[..., 0] < self.width - 0.5)
            & (p[..., 1] >= -0.5) & (p[..., 1] < self.height - 0.5)
        )

    def world_to_camera(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.R.T + self.t

    def camera_to_world(self, Xc) -> np.ndarray:
        return (np.asarray(Xc, dtype=np.float64) - self.t) @ self.R


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Camera-frame z per pixel, shape ``(height, width)``.

    NaN, +-inf and non-positive entries are invalid.
    """

    view: int
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InvalidInputError(f"depth map for view {self.view} must be 2-D")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def valid(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.isfinite(self.values) & (self.values > 0)


@dataclass(frozen=True, eq=False)
class Pointmap:
    """World-frame point per pixel, ``points`` has shape ``(height, width, 3)``.

    ``colors`` is the source image (uint8, same grid); invalid entries hold NaN.
    """

    view: int
    points: np.ndarray
    valid: np.ndarray
    colors: np.ndarray | None = None

    @property
    def shape(self):
        return self.valid.shape

    def valid_points(self) -> np.ndarray:
        return self.points[self.valid]

    def valid_colors(self) -> np.ndarray:
        n = int(self.valid.sum())
        if self.colors is None:
            return np.full((n, 3), 128, dtype=np.uint8)
        return self.colors[self.valid]


@dataclass(frozen=True)
class SceneScale:
    S: float
    centroid: np.ndarray = field(repr=False)


def project(camera: Camera, X):
    """Project world point(s) to pixels.

    Returns ``(uv, in_front)``. For a single point ``uv`` has shape ``(2,)``
    and ``in_front`` is a bool; for ``(N, 3)`` input both are batched.
    Points with camera-frame z <= 1e-12 get ``in_front = False`` and NaN pixels.
    """
    X = np.asarray(X, dtype=np.float64)
    y = camera.world_to_camera(X) @ camera.K.T
    z = y[..., 2]
    in_front = z > BEHIND_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = y[..., :2] / z[..., None]
    uv = np.where(in_front[..., None], uv, np.nan)
    if X.ndim == 1:
        return uv, bool(in_front)
    return uv, in_front


def backproject_pixel(camera: Camera, pixel, depth: float) -> np.ndarray:
    """Camera-frame point ``K^-1 [i, j, 1]^T * depth``."""
    if not (np.isfinite(depth) and depth > 0):
        raise InvalidInputError(f"depth must be positive and finite, got {depth}")
    if not camera.contains(pixel):
        raise InvalidInputError(f"pixel {tuple(pixel)} outside {camera.width}x{camera.height} image")
    i, j = pixel
    ray = np.linalg.solve(camera.K, np.array([i, j, 1.0]))
    out = ray * depth
    out[2] = depth  # K[2] = (0, 0, 1) makes this exact anyway; keep it bit-exact
    return out


def pixel_rays(camera: Camera) -> np.ndarray:
    """Camera-frame rays with unit z for every pixel, shape ``(H, W, 3)``."""
    jj, ii = np.mgrid[0 : camera.height, 0 : camera.width].astype(np.float64)
    hom = np.stack([ii, jj, np.ones_like(ii)], axis=-1)
    rays = hom @ camera.K_inv.T
    rays[..., 2] = 1.0
    return rays


def backproject_depthmap(camera: Camera, depth: DepthMap, image=None) -> Pointmap:
    if depth.width != camera.width or depth.height != camera.height:
        raise InvalidInputError(
            f"depth map {depth.width}x{depth.height} does not match camera "
            f"{camera.id} ({camera.width}x{camera.height})"
        )
    valid = depth.valid
    d = np.where(valid, depth.values, np.nan)
    pts_cam = pixel_rays(camera) * d[..., None]
    pts = camera.camera_to_world(pts_cam)
    pts[~valid] = np.nan
    colors = None
    if image is not None:
        colors = np.asarray(image, dtype=np.uint8)
        if colors.shape != (camera.height, camera.width, 3):
            raise InvalidInputError(f"image for view {camera.id} has shape {colors.shape}")
    return Pointmap(view=camera.id, points=pts, valid=valid, colors=colors)


def scene_scale(cameras) -> SceneScale:
    """Radius of the sphere around the mean camera centre enclosing all centres.

    Falls back to ``S = 1`` when the centres coincide.
    """
    cameras = list(cameras)
    if not cameras:
        raise InvalidInputError("scene_scale needs at least one camera")
    centers = np.array([c.center for c in cameras])
    centroid = centers.mean(axis=0)
    S = float(np.sqrt(((centers - centroid) ** 2).sum(axis=1)).max())
    if not S > 0:
        log.warning("camera centres coincide; falling back to scene scale S = 1.0")
        S = 1.0
    return SceneScale(S=S, centroid=centroid)


def look_at(center, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)):
    """World-to-camera ``(R, t)`` for a camera at ``center`` looking at ``target``.

    Camera axes follow the OpenCV convention (x right, y down, z forward).
    """
    center = np.asarray(center, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - center
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, (0.0, 1.0, 0.0))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return R, -R @ center
