"""Multi-view correspondence tracks built from pairwise matches."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class PairwiseMatch:
    """``view_a`` is the query side; ``pixel_b`` is where the matcher found it."""

    view_a: int
    view_b: int
    pixel_a: tuple[float, float]
    pixel_b: tuple[float, float]
    confidence: float = 1.0

    def __post_init__(self):
        if self.view_a == self.view_b:
            raise InvalidInputError(f"match within a single view ({self.view_a})")
        object.__setattr__(self, "pixel_a", (float(self.pixel_a[0]), float(self.pixel_a[1])))
        object.__setattr__(self, "pixel_b", (float(self.pixel_b[0]), float(self.pixel_b[1])))


@dataclass(frozen=True)
class Track:
    """One pixel per view, all observing the same surface point.

    ``query_views`` lists the views whose observation was the query side of
    at least one match, i.e. lies on the matcher's sampling grid.
    """

    observations: dict[int, tuple[float, float]]
    anchor: tuple[int, tuple[float, float]]
    query_views: frozenset[int] = frozenset()

    def __post_init__(self):
        if len(self.observations) < 2:
            raise InvalidInputError("a track needs at least two observations")
        view, pixel = self.anchor
        if self.observations.get(view) != pixel:
            raise InvalidInputError("track anchor must be one of its observations")

    @property
    def views(self) -> list[int]:
        return sorted(self.observations)

    def __len__(self):
        return len(self.observations)


@dataclass(frozen=True)
class ViewNeighborhood:
    query: int
    keys: tuple[int, ...]
    distances: tuple[float, ...]


def spherical_coords(center) -> tuple[float, float, float]:
    """Azimuth, elevation and radius of a camera centre about the world origin."""
    x, y, z = (float(v) for v in center)
    r = math.sqrt(x * x + y * y + z * z)
    azimuth = math.atan2(y, x)
    elevation = math.asin(max(-1.0, min(1.0, z / r))) if r > 0 else 0.0
    return azimuth, elevation, r


def view_distance(center_i, center_j) -> float:
    ai, ei, ri = spherical_coords(center_i)
    aj, ej, rj = spherical_coords(center_j)
    return math.sqrt((ai - aj) ** 2 + (ei - ej) ** 2 + (ri - rj) ** 2)


def select_key_views(cameras, query: int, k: int) -> ViewNeighborhood:
    """The ``k`` views nearest to ``query`` in (azimuth, elevation, radius) space."""
    by_id = {c.id: c for c in cameras}
    if query not in by_id:
        raise InvalidInputError(f"unknown query view {query}")
    if not 1 <= k < len(by_id):
        raise InvalidInputError(f"k={k} must be in [1, {len(by_id) - 1}]")
    q = by_id[query].center
    scored = sorted(
        (view_distance(q, cam.center), vid) for vid, cam in by_id.items() if vid != query
    )[:k]
    return ViewNeighborhood(
        query=query, keys=tuple(v for _, v in scored), distances=tuple(d for d, _ in scored)
    )


def default_k(n_views: int) -> int:
    """Two key views in the 3-view setting, four otherwise, capped by what exists."""
    return min(2 if n_views <= 3 else 4, n_views - 1)


def quantize_pixel(pixel, step: float = 1.0) -> tuple[int, int]:
    return (math.floor(pixel[0] / step + 0.5), math.floor(pixel[1] / step + 0.5))


class UnionFind:
    def __init__(self):
        self.parent = {}
        self.rank = {}

    def find(self, x):
        parent = self.parent
        if x not in parent:
            parent[x] = x
            self.rank[x] = 0
            return x
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1


def build_tracks(matches, quantization: float = 1.0) -> list[Track]:
    """Chain pairwise matches into tracks via connected components.

    Nodes are ``(view, quantized pixel)``. Each node keeps the pixel of its
    most confident incident match. A component holding several nodes in one
    view keeps the most confident node and drops the rest; ties go to the
    lexicographically smallest pixel, so the result ignores input order.
    """
    uf = UnionFind()
    best: dict = {}
    queried = set()

    def visit(view, pixel, conf, is_query):
        node = (view, quantize_pixel(pixel, quantization))
        key = (-conf, pixel)
        if node not in best or key < best[node]:
            best[node] = key
        if is_query:
            queried.add(node)
        return node

    for m in matches:
        a = visit(m.view_a, m.pixel_a, m.confidence, True)
        b = visit(m.view_b, m.pixel_b, m.confidence, False)
        uf.union(a, b)

    components = defaultdict(list)
    for node in best:
        components[uf.find(node)].append(node)

    tracks = []
    for nodes in components.values():
        per_view = {}
        for node in nodes:
            view = node[0]
            if view not in per_view or best[node] < best[per_view[view]]:
                per_view[view] = node
        if len(per_view) < 2:
            continue
        obs = {v: best[n][1] for v, n in sorted(per_view.items())}
        anchor_view = min(obs)
        tracks.append(
            Track(
                observations=obs,
                anchor=(anchor_view, obs[anchor_view]),
                query_views=frozenset(v for v, n in per_view.items() if n in queried),
            )
        )
    tracks.sort(key=lambda t: (t.anchor, sorted(t.observations.items())))
    return tracks


def filter_matches_to_key_views(matches, cameras, k: int):
    """Keep matches between a view and one of its ``k`` key views (either direction)."""
    ids = [c.id for c in cameras]
    keys = {q: set(select_key_views(cameras, q, k).keys) for q in ids}
    return [m for m in matches if m.view_b in keys.get(m.view_a, ()) or m.view_a in keys.get(m.view_b, ())]


def multiview_score(tracks) -> float:
    """Fraction of tracks observed by at least three views."""
    tracks = list(tracks)
    if not tracks:
        return 0.0
    return sum(1 for t in tracks if len(t.observations) >= 3) / len(tracks)


def track_lengths(tracks) -> np.ndarray:
    return np.array([len(t.observations) for t in tracks], dtype=np.int64)
