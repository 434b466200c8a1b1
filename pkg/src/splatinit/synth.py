"""Synthetic scenes with known geometry for end-to-end checks.

A scene is an analytic surface seen by cameras on a spherical arc. True
depth is ray-cast; the "estimated" depth is the true depth pushed through a
smooth multiplicative scale field plus a smooth additive offset, which is
the failure mode a monocular estimator shows. Matches are exact
projections of surface points, placed so no two tracks share a pixel cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cbps import SFM, PointCloud
from .errors import SceneGenerationError
from .geometry import Camera, DepthMap, Pointmap, backproject_depthmap, look_at, pixel_rays, project
from .tracks import PairwiseMatch, default_k, quantize_pixel, select_key_views


class Plane:
    kind = "plane"

    def intersect(self, origins, dirs):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -origins[..., 2] / dirs[..., 2]
        return np.where(t > 0, t, np.nan)

    def distance(self, X):
        return np.abs(np.asarray(X)[..., 2])


class Sphere:
    kind = "sphere"

    def __init__(self, radius=1.5):
        self.radius = radius

    def intersect(self, origins, dirs):
        a = (dirs**2).sum(-1)
        b = 2 * (origins * dirs).sum(-1)
        c = (origins**2).sum(-1) - self.radius**2
        disc = b * b - 4 * a * c
        with np.errstate(invalid="ignore"):
            t = (-b - np.sqrt(disc)) / (2 * a)
        return np.where((disc >= 0) & (t > 0), t, np.nan)

    def distance(self, X):
        return np.abs(np.linalg.norm(X, axis=-1) - self.radius)


class HeightField:
    """``z = sum_k a_k sin(f_k . (x, y) + phi_k)``, a few seeded low-frequency waves."""

    kind = "heightfield"

    def __init__(self, rng, amplitude=0.25, n_waves=3):
        self.amp = rng.uniform(0.3, 1.0, n_waves)
        self.amp *= amplitude / self.amp.sum()
        self.freq = rng.uniform(-1.2, 1.2, (n_waves, 2))
        self.phase = rng.uniform(0, 2 * np.pi, n_waves)

    def height(self, x, y):
        arg = x[..., None] * self.freq[:, 0] + y[..., None] * self.freq[:, 1] + self.phase
        return (self.amp * np.sin(arg)).sum(-1)

    def gradient(self, x, y):
        arg = x[..., None] * self.freq[:, 0] + y[..., None] * self.freq[:, 1] + self.phase
        c = self.amp * np.cos(arg)
        return (c * self.freq[:, 0]).sum(-1), (c * self.freq[:, 1]).sum(-1)

    def _g(self, origins, dirs, t):
        p = origins + t[..., None] * dirs
        return p[..., 2] - self.height(p[..., 0], p[..., 1])

    def intersect(self, origins, dirs, t_max=50.0, n_steps=400):
        shape = dirs.shape[:-1]
        o = np.broadcast_to(origins, dirs.shape).reshape(-1, 3)
        d = dirs.reshape(-1, 3)
        hit = np.full(len(d), np.nan)
        prev = self._g(o, d, np.zeros(len(d)))
        # march to the first sign change, then bisect
        for t in np.linspace(0, t_max, n_steps + 1)[1:]:
            tt = np.full(len(d), t)
            cur = self._g(o, d, tt)
            new = np.isnan(hit) & (prev > 0) & (cur <= 0)
            hit[new] = t
            prev = cur
            if not np.isnan(hit).any():
                break
        found = ~np.isnan(hit)
        a = hit[found] - t_max / n_steps
        b = hit[found].copy()
        oo, dd = o[found], d[found]
        for _ in range(60):
            m = 0.5 * (a + b)
            above = self._g(oo, dd, m) > 0
            a = np.where(above, m, a)
            b = np.where(above, b, m)
        hit[found] = 0.5 * (a + b)
        return hit.reshape(shape)

    def distance(self, X):
        X = np.asarray(X)
        gx, gy = self.gradient(X[..., 0], X[..., 1])
        # first-order point-to-surface distance
        return np.abs(X[..., 2] - self.height(X[..., 0], X[..., 1])) / np.sqrt(1 + gx**2 + gy**2)


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "plane"
    n_views: int = 3
    width: int = 64
    height: int = 48
    corruption: float = 0.0
    seed: int = 0
    match_fraction: float = 0.05
    arc_degrees: float = 60.0
    distance: float = 5.0
    elevation_degrees: float | None = None
    k: int | None = None
    sfm_stride: int = 10


@dataclass(eq=False)
class SyntheticScene:
    spec: SceneSpec
    surface: object
    cameras: list
    true_depths: dict
    depths: dict
    images: dict
    matches: list
    sfm: PointCloud
    scale_fields: dict = field(repr=False)
    offset_fields: dict = field(repr=False)
    track_points: np.ndarray = field(repr=False, default=None)

    @property
    def camera_map(self):
        return {c.id: c for c in self.cameras}

    def true_pointmap(self, view) -> Pointmap:
        return backproject_depthmap(self.camera_map[view], self.true_depths[view], self.images[view])

    def uncorrupt(self, view) -> np.ndarray:
        """Invert the recorded corruption back to the true depth."""
        return (self.depths[view].values - self.offset_fields[view]) / self.scale_fields[view]


def texture(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    rgb = np.stack(
        [
            np.sin(3.1 * X[..., 0] + 0.4 * X[..., 2]),
            np.sin(2.3 * X[..., 1] + 1.7),
            np.sin(1.9 * (X[..., 0] + X[..., 1]) + 2.9 * X[..., 2]),
        ],
        axis=-1,
    )
    return np.clip(np.round(127.5 + 127.0 * rgb), 0, 255).astype(np.uint8)


def _smooth_field(rng, width, height, n_terms=3):
    """Seeded low-frequency field with values in [-1, 1]."""
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    u = 2 * u / max(width - 1, 1) - 1
    v = 2 * v / max(height - 1, 1) - 1
    coef = rng.uniform(-1, 1, n_terms + 1)
    freq = rng.uniform(-1, 1, (n_terms, 2))
    phase = rng.uniform(0, 2 * np.pi, n_terms)
    g = np.full_like(u, coef[0])
    for c, (fu, fv), ph in zip(coef[1:], freq, phase):
        g += c * np.cos(np.pi * (fu * u + fv * v) + ph)
    return g / np.abs(coef).sum()


def _make_surface(kind, rng):
    if kind == "plane":
        return Plane()
    if kind == "sphere":
        return Sphere()
    if kind == "heightfield":
        return HeightField(rng)
    raise ValueError(f"unknown surface kind {kind!r}")


def _make_cameras(spec: SceneSpec, rng):
    elev = spec.elevation_degrees
    if elev is None:
        elev = 30.0 if spec.kind == "sphere" else 60.0
    n = spec.n_views
    f = 0.9 * spec.width
    K = np.array([[f, 0, (spec.width - 1) / 2], [0, f, (spec.height - 1) / 2], [0, 0, 1]])
    cams = []
    for i in range(n):
        az = math.radians(-spec.arc_degrees / 2 + spec.arc_degrees * i / max(n - 1, 1) + rng.uniform(-1, 1))
        el = math.radians(elev + rng.uniform(-2, 2))
        D = spec.distance * (1 + rng.uniform(-0.02, 0.02))
        center = D * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
        R, t = look_at(center)
        cams.append(Camera(id=i, K=K, R=R, t=t, width=spec.width, height=spec.height))
    return cams


def _render_depth(camera, surface):
    rays = pixel_rays(camera)
    dirs = rays @ camera.R  # world-frame directions whose camera-frame z is 1
    return surface.intersect(camera.center, dirs)


def _visible(camera, surface, X, tol=1e-6):
    """Points projecting inside the image and not occluded along the viewing ray."""
    uv, front = project(camera, X)
    ok = front & camera.contains(np.nan_to_num(uv, nan=-1e9))
    C = camera.center
    dist = np.linalg.norm(X - C, axis=1)
    dirs = (X - C) / dist[:, None]
    t = surface.intersect(np.broadcast_to(C, X.shape), dirs)
    ok &= np.abs(t - dist) <= tol * (1 + dist)
    return uv, ok


def generate_scene(spec: SceneSpec) -> SyntheticScene:
    if spec.n_views < 2:
        raise SceneGenerationError("a scene needs at least two views")
    if spec.width < 8 or spec.height < 8:
        raise SceneGenerationError("resolution must be at least 8x8")
    rng = np.random.default_rng(spec.seed)
    surface = _make_surface(spec.kind, rng)
    cameras = _make_cameras(spec, rng)

    true_depths, depths, images, scales, offsets = {}, {}, {}, {}, {}
    for cam in cameras:
        z = _render_depth(cam, surface)
        if not np.isfinite(z).any():
            raise SceneGenerationError(f"surface is not visible from view {cam.id}")
        true_depths[cam.id] = DepthMap(cam.id, z)
        pts = backproject_depthmap(cam, true_depths[cam.id]).points
        img = texture(np.nan_to_num(pts))
        img[~np.isfinite(z)] = 0
        images[cam.id] = img
        g_scale = _smooth_field(rng, cam.width, cam.height)
        g_offset = _smooth_field(rng, cam.width, cam.height)
        a = spec.corruption
        scales[cam.id] = 1 + a * g_scale
        offsets[cam.id] = a * 0.5 * float(np.nanmedian(z)) * g_offset
        depths[cam.id] = DepthMap(cam.id, z.copy() if a == 0 else z * scales[cam.id] + offsets[cam.id])

    k = spec.k if spec.k is not None else default_k(spec.n_views)
    matches, points = [], []
    occupied = set()
    for cam in cameras:
        q = cam.id
        keys = select_key_views(cameras, q, k).keys
        valid = np.flatnonzero(np.isfinite(true_depths[q].values).ravel())
        n_cand = min(len(valid), int(round(spec.match_fraction * cam.width * cam.height)))
        if n_cand == 0:
            continue
        flat = rng.choice(valid, size=n_cand, replace=False)
        rows, cols = np.divmod(flat, cam.width)
        X = backproject_depthmap(cam, true_depths[q]).points[rows, cols]
        seen = {j: _visible(cameras[j], surface, X) for j in keys}
        for n in range(n_cand):
            p_q = (float(cols[n]), float(rows[n]))
            obs = [(j, tuple(float(c) for c in seen[j][0][n])) for j in keys if seen[j][1][n]]
            if not obs:
                continue
            cells = [(q, quantize_pixel(p_q))] + [(j, quantize_pixel(p)) for j, p in obs]
            if any(c in occupied for c in cells):
                continue
            occupied.update(cells)
            points.append(X[n])
            matches.extend(PairwiseMatch(q, j, p_q, p) for j, p in obs)

    points = np.array(points).reshape(-1, 3)
    sfm_pts = points[:: spec.sfm_stride]
    sfm = PointCloud(sfm_pts, texture(sfm_pts), np.full(len(sfm_pts), SFM, np.uint8))
    return SyntheticScene(
        spec=spec,
        surface=surface,
        cameras=cameras,
        true_depths=true_depths,
        depths=depths,
        images=images,
        matches=matches,
        sfm=sfm,
        scale_fields=scales,
        offset_fields=offsets,
        track_points=points,
    )


@dataclass(frozen=True)
class RecoveryReport:
    rms: float
    max: float
    n_points: int


def evaluate_recovery(scene: SyntheticScene, cloud) -> RecoveryReport:
    """Distance of every output point to the analytic surface."""
    pos = cloud.positions if hasattr(cloud, "positions") else np.asarray(cloud)
    if len(pos) == 0:
        raise ValueError("cannot evaluate an empty cloud")
    d = scene.surface.distance(pos)
    return RecoveryReport(rms=float(np.sqrt(np.mean(d**2))), max=float(d.max()), n_points=len(pos))


def write_scene(scene: SyntheticScene, directory, output="init.ply", **overrides):
    """Write the scene in the on-disk input formats plus a job manifest.

    Returns the manifest path.
    """
    from pathlib import Path

    from . import io

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    io.write_cameras_json(scene.cameras, d / "cameras.json")
    depths, images = {}, {}
    for cam in scene.cameras:
        depths[str(cam.id)] = f"depth_{cam.id}.pfm"
        images[str(cam.id)] = f"image_{cam.id}.png"
        io.write_depth_pfm(scene.depths[cam.id], d / depths[str(cam.id)])
        io.write_image(scene.images[cam.id], d / images[str(cam.id)])
    io.write_matches(scene.matches, d / "matches.txt")
    io.write_ply(scene.sfm, d / "sfm.ply")
    manifest = {
        "cameras": "cameras.json",
        "depths": depths,
        "images": images,
        "matches": "matches.txt",
        "sfm": "sfm.ply",
        "output": output,
        "workdir": "work",
        "seed": scene.spec.seed,
    }
    manifest.update(overrides)
    io.write_json(manifest, d / "manifest.json")
    io.write_json(
        {k: getattr(scene.spec, k) for k in scene.spec.__dataclass_fields__}, d / "scene.json"
    )
    return d / "manifest.json"
