"""Radius sampling of calibrated points near control points, and final cloud assembly."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)

SFM, CBP = 0, 1

# kd-tree candidates are gathered with a slightly inflated radius, then every
# decision is made with the exact distance below
_INFLATE = 1e-9
# pairs whose float distance is within this relative band of r are re-checked exactly
_BAND = 1e-12


@dataclass(frozen=True, eq=False)
class PointCloud:
    positions: np.ndarray
    colors: np.ndarray
    tags: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        col = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        tags = np.asarray(self.tags, dtype=np.uint8).reshape(-1)
        if not (len(pos) == len(col) == len(tags)):
            raise ValueError("positions, colors and tags must have equal length")
        if not np.all(np.isfinite(pos)):
            raise ValueError("point positions must be finite")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)
        object.__setattr__(self, "tags", tags)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros((0, 3), np.uint8), np.zeros(0, np.uint8))

    @classmethod
    def from_points(cls, positions, colors=None, tag=CBP):
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        if colors is None:
            colors = np.full((len(positions), 3), 128, np.uint8)
        return cls(positions, colors, np.full(len(positions), tag, np.uint8))

    def __len__(self):
        return len(self.positions)

    def take(self, idx):
        return PointCloud(self.positions[idx], self.colors[idx], self.tags[idx])

    @staticmethod
    def concat(*clouds):
        clouds = [c for c in clouds if len(c)] or [PointCloud.empty()]
        return PointCloud(
            np.concatenate([c.positions for c in clouds]),
            np.concatenate([c.colors for c in clouds]),
            np.concatenate([c.tags for c in clouds]),
        )


@dataclass(frozen=True)
class SamplingConfig:
    radius_fraction: float = 1 / 8
    margin: float = 0.05
    cluster_radius: float = 0.01
    max_points: int = 30_000

    def __post_init__(self):
        if not (self.radius_fraction > 0 and self.margin > 0 and self.cluster_radius > 0):
            raise ValueError("sampling radius, margin and cluster radius must be positive")
        if self.max_points < 1:
            raise ValueError("max_points must be at least 1")


def default_radius_fraction(n_views: int) -> float:
    return 1 / 8 if n_views < 9 else 1 / 16


def distance(a, b) -> np.ndarray:
    return np.sqrt(((a - b) ** 2).sum(axis=-1))


def _exact_le(a, b, r) -> bool:
    """|a - b| <= r decided in rational arithmetic."""
    d2 = sum((Fraction(float(x)) - Fraction(float(y))) ** 2 for x, y in zip(a, b))
    return d2 <= Fraction(float(r)) ** 2


def within(a, b, r) -> np.ndarray:
    """Elementwise |a - b| <= r, exact even for points on the boundary.

    Floating point settles every pair whose distance is clearly away from
    ``r``; the rest are decided exactly.
    """
    a, b = np.broadcast_arrays(np.asarray(a, np.float64), np.asarray(b, np.float64))
    d = distance(a, b)
    out = d <= r
    close = np.abs(d - r) <= _BAND * (d + r) + 1e-300
    for idx in zip(*np.nonzero(close)):
        out[idx] = _exact_le(a[idx], b[idx], r)
    return out


def _any_within(tree: cKDTree, anchors, points, r):
    """Boolean mask: some anchor lies at distance <= r from each point."""
    hit = np.zeros(len(points), dtype=bool)
    if len(points) == 0 or len(anchors) == 0:
        return hit
    bound = r * (1 + _INFLATE) + 1e-12
    d, nn = tree.query(points, k=1, distance_upper_bound=bound)
    cand = np.flatnonzero(np.isfinite(d))
    if len(cand):
        hit[cand] = within(points[cand], anchors[nn[cand]], r)
    # the kd-tree's nearest anchor need not be the one that decides the boundary case
    unsure = cand[~hit[cand]]
    for i, neigh in zip(unsure, tree.query_ball_point(points[unsure], bound)):
        if neigh:
            hit[i] = bool(within(points[i], anchors[neigh], r).any())
    return hit


def cbps_sample(cbp, controls, r: float) -> PointCloud:
    """Every valid calibrated point within distance ``r`` (inclusive) of a control point.

    ``cbp`` is a list of pointmaps; output order is view by view, row-major.
    ``controls`` are ControlPoints or an ``(M, 3)`` array.
    """
    if r < 0:
        raise ValueError("sampling radius must be non-negative")
    anchors = _positions(controls)
    maps = sorted(cbp, key=lambda pm: pm.view)
    pts = np.concatenate([pm.valid_points() for pm in maps]) if maps else np.zeros((0, 3))
    cols = np.concatenate([pm.valid_colors() for pm in maps]) if maps else np.zeros((0, 3), np.uint8)
    if len(anchors) == 0:
        log.warning("no control points; CBPS returns an empty cloud")
        return PointCloud.empty()
    keep = _any_within(cKDTree(anchors), anchors, pts, r)
    return PointCloud(pts[keep], cols[keep], np.full(int(keep.sum()), CBP, np.uint8))


def _positions(controls) -> np.ndarray:
    if isinstance(controls, np.ndarray):
        return controls.reshape(-1, 3).astype(np.float64)
    controls = list(controls)
    if not controls:
        return np.zeros((0, 3))
    return np.array([c.position for c in controls], dtype=np.float64)


def merge_with_sfm(sfm: PointCloud, sampled: PointCloud, margin: float) -> PointCloud:
    """SfM points followed by the sampled points farther than ``margin`` from all of them."""
    sfm = PointCloud(sfm.positions, sfm.colors, np.full(len(sfm), SFM, np.uint8))
    if len(sfm) == 0:
        return sampled
    near = _any_within(cKDTree(sfm.positions), sfm.positions, sampled.positions, margin)
    return PointCloud.concat(sfm, sampled.take(~near))


def radius_cluster(cloud: PointCloud, cluster_radius: float) -> PointCloud:
    """Greedy thinning in input order: drop a point if a kept point is within the radius."""
    n = len(cloud)
    if n == 0:
        return cloud
    pos = cloud.positions
    tree = cKDTree(pos)
    bound = cluster_radius * (1 + _INFLATE) + 1e-12
    pairs = tree.query_pairs(bound, output_type="ndarray")
    if len(pairs) == 0:
        return cloud
    pairs = pairs[within(pos[pairs[:, 0]], pos[pairs[:, 1]], cluster_radius)]
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    order = np.lexsort((hi, lo))
    lo, hi = lo[order], hi[order]
    starts = np.searchsorted(lo, np.arange(n + 1))
    removed = np.zeros(n, dtype=bool)
    # only points with a later neighbour can suppress anything
    for i in np.unique(lo).tolist():
        if not removed[i]:
            removed[hi[starts[i] : starts[i + 1]]] = True
    return cloud.take(~removed)


def downsample(cloud: PointCloud, max_points: int, seed: int = 0) -> PointCloud:
    """Cap the calibrated (non-SfM) points at ``max_points`` by seeded uniform sampling."""
    if max_points < 1:
        raise ValueError("max_points must be at least 1")
    cbp_idx = np.flatnonzero(cloud.tags == CBP)
    if len(cbp_idx) <= max_points:
        return cloud
    rng = np.random.default_rng(seed)
    chosen = rng.choice(cbp_idx, size=max_points, replace=False)
    keep = np.zeros(len(cloud), dtype=bool)
    keep[cloud.tags != CBP] = True
    keep[chosen] = True
    return cloud.take(keep)
