"""3-D thin-plate-spline warp from backprojected control points onto triangulated ones.

The warp is ``f(X) = t + A X + sum_i W_i U(|X - c_i|)`` with ``U(r) = r``
(the 3-D biharmonic kernel) and centres ``c_i`` at the source points, so
``f(source_i) = target_i`` when the regularisation is zero.
"""

from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components
from scipy.sparse import coo_matrix
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import FormatError, InsufficientControlsError, RankDeficientError
from .geometry import Pointmap

log = logging.getLogger(__name__)

DEDUP_TOL = 1e-9
EVAL_CHUNK = 4096
MAGIC = b"TPS3"
VERSION = 1


@dataclass(frozen=True, eq=False)
class ControlPairs:
    """``sources[i]`` (backprojected estimate) should land on ``targets[i]`` (triangulated)."""

    sources: np.ndarray
    targets: np.ndarray
    pixels: np.ndarray | None = None

    def __len__(self):
        return len(self.sources)

    def subset(self, idx):
        return ControlPairs(
            self.sources[idx], self.targets[idx], None if self.pixels is None else self.pixels[idx]
        )


@dataclass(frozen=True, eq=False)
class TpsModel:
    t: np.ndarray
    A: np.ndarray
    centers: np.ndarray
    W: np.ndarray
    lam: float = 0.0

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), np.eye(3), np.zeros((0, 3)), np.zeros((0, 3)))

    @property
    def is_identity(self) -> bool:
        return not self.W.any() and not self.t.any() and np.array_equal(self.A, np.eye(3))

    def side_conditions(self) -> tuple[np.ndarray, np.ndarray]:
        """``sum_i W_i`` and ``sum_i W_i c_i^T``; both vanish for a valid fit."""
        return self.W.sum(axis=0), self.W.T @ self.centers

    def __call__(self, X):
        return apply_tps(self, X)


def kernel(r):
    return r


def _dedup(sources, targets):
    """Merge sources closer than DEDUP_TOL, averaging their targets."""
    pairs = cKDTree(sources).query_pairs(DEDUP_TOL, output_type="ndarray")
    if len(pairs) == 0:
        return sources, targets
    n = len(sources)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    # first occurrence of each label keeps its source, in input order
    _, first = np.unique(labels, return_index=True)
    order = np.sort(first)
    remap = np.empty(labels.max() + 1, dtype=np.int64)
    remap[labels[order]] = np.arange(len(order))
    group = remap[labels]
    counts = np.bincount(group)
    merged = np.zeros((len(order), 3))
    np.add.at(merged, group, targets)
    log.debug("merged %d duplicate control sources", n - len(order))
    return sources[order], merged / counts[:, None]


def _affine_frame(sources):
    """Origin, in-hull basis ``B`` and orthogonal complement ``N`` of the sources."""
    origin = sources.mean(axis=0)
    _, s, vt = np.linalg.svd(sources - origin, full_matrices=True)
    rank = int((s > 1e-9 * max(s[0], 1e-300)).sum()) if len(s) else 0
    return origin, vt[:rank].T, vt[rank:].T


def _solve(K, P, rhs, lam):
    m, p = P.shape
    L = np.zeros((m + p, m + p))
    # U(r) = r is conditionally negative definite, so the smoothing term enters with a minus sign
    L[:m, :m] = K - lam * np.eye(m)
    L[:m, m:] = P
    L[m:, :m] = P.T
    b = np.zeros((m + p, 3))
    b[:m] = rhs
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        sol = scipy.linalg.solve(L, b, assume_a="sym", check_finite=False)
    if not np.all(np.isfinite(sol)):
        raise np.linalg.LinAlgError("non-finite solution")
    return sol[:m], sol[m:]


def fit_tps(pairs: ControlPairs, lam: float = 0.0, scale: float = 1.0) -> TpsModel:
    """Fit the interpolating (``lam = 0``) or smoothing warp.

    Sources spanning fewer than three dimensions (e.g. a planar scene) keep the
    affine part as the identity along the missing directions. A singular
    system is retried once with ``lam = max(lam, 1e-8 * scale)``.
    """
    sources = np.asarray(pairs.sources, dtype=np.float64).reshape(-1, 3)
    targets = np.asarray(pairs.targets, dtype=np.float64).reshape(-1, 3)
    if len(sources) != len(targets):
        raise ValueError("sources and targets differ in length")
    if not (np.all(np.isfinite(sources)) and np.all(np.isfinite(targets))):
        raise ValueError("control points must be finite")
    if len(sources) >= 2:
        sources, targets = _dedup(sources, targets)
    if len(sources) < 4:
        raise InsufficientControlsError(f"need at least 4 distinct control pairs, got {len(sources)}")

    origin, B, N = _affine_frame(sources)
    if N.shape[1] == 0:
        P = np.c_[np.ones(len(sources)), sources]
        rhs = targets
    else:
        u = (sources - origin) @ B
        P = np.c_[np.ones(len(sources)), u]
        rhs = targets - (sources - origin) @ N @ N.T
    K = kernel(cdist(sources, sources))

    try:
        W, a = _solve(K, P, rhs, lam)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
        lam = max(lam, 1e-8 * scale)
        log.warning("TPS system is singular; retrying with regularisation %.3g", lam)
        try:
            W, a = _solve(K, P, rhs, lam)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
            raise RankDeficientError(f"TPS system is rank deficient: {exc}") from None

    if N.shape[1] == 0:
        t, A = a[0], a[1:].T
    else:
        # f(x) = a0 + G B^T (x - o) + N N^T (x - o) + sum W U
        A = a[1:].T @ B.T + N @ N.T
        t = a[0] - A @ origin
    return TpsModel(t=np.asarray(t, dtype=np.float64), A=np.asarray(A), centers=sources, W=W, lam=float(lam))


def apply_tps(model: TpsModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = X.reshape(-1, 3)
    out = X @ model.A.T + model.t
    if len(model.centers):
        for s in range(0, len(X), EVAL_CHUNK):
            chunk = X[s : s + EVAL_CHUNK]
            out[s : s + EVAL_CHUNK] += kernel(cdist(chunk, model.centers)) @ model.W
    return out[0] if single else out


def deform_pointmap(model: TpsModel, pointmap: Pointmap) -> Pointmap:
    """Warp every valid point; invalid entries and the mask pass through."""
    points = pointmap.points.copy()
    if not model.is_identity:
        points[pointmap.valid] = apply_tps(model, pointmap.points[pointmap.valid])
    return Pointmap(view=pointmap.view, points=points, valid=pointmap.valid.copy(), colors=pointmap.colors)


def sample_pointmap(pointmap: Pointmap, pixel):
    """Bilinear sample at a sub-pixel location, renormalised over valid neighbours.

    Returns None when the nearest pixel is invalid or outside the grid.
    """
    H, W = pointmap.shape
    x, y = float(pixel[0]), float(pixel[1])
    ni, nj = int(np.floor(x + 0.5)), int(np.floor(y + 0.5))
    if not (0 <= ni < W and 0 <= nj < H) or not pointmap.valid[nj, ni]:
        return None
    i0, j0 = int(np.floor(x)), int(np.floor(y))
    fx, fy = x - i0, y - j0
    if fx == 0.0 and fy == 0.0:
        return pointmap.points[j0, i0].copy()
    acc = np.zeros(3)
    wsum = 0.0
    for dj, wy in ((0, 1 - fy), (1, fy)):
        for di, wx in ((0, 1 - fx), (1, fx)):
            w = wx * wy
            jj, ii = j0 + dj, i0 + di
            if w > 0 and 0 <= ii < W and 0 <= jj < H and pointmap.valid[jj, ii]:
                acc += w * pointmap.points[jj, ii]
                wsum += w
    return acc / wsum


def build_control_pairs(view: int, controls, pointmap: Pointmap, query_only: bool = True) -> ControlPairs:
    """Pair each control point seen in ``view`` with the pointmap at its pixel.

    With ``query_only`` only observations sampled on the matcher's query grid
    are used, so sources are direct lookups. Observations on invalid depth are
    skipped.
    """
    if pointmap.view != view:
        raise ValueError(f"pointmap belongs to view {pointmap.view}, not {view}")
    src, tgt, pix = [], [], []
    skipped = 0
    for cp in controls:
        pixel = cp.track.observations.get(view)
        if pixel is None or (query_only and view not in cp.track.query_views):
            continue
        s = sample_pointmap(pointmap, pixel)
        if s is None:
            skipped += 1
            continue
        src.append(s)
        tgt.append(cp.position)
        pix.append(pixel)
    if skipped:
        log.info("view %d: skipped %d control pairs on invalid depth", view, skipped)
    if not src:
        raise InsufficientControlsError(f"view {view} has no usable control pairs")
    return ControlPairs(np.array(src), np.array(tgt, dtype=np.float64), np.array(pix, dtype=np.float64))


def dump_model(model: TpsModel, path) -> None:
    """Little-endian record: magic, u32 version, u64 M, f64 lambda, t, A, centres, W."""
    M = len(model.centers)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQd", VERSION, M, model.lam))
        for arr in (model.t, model.A, model.centers, model.W):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path) -> TpsModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise FormatError("bad magic, expected TPS3", location=str(path))
    version, M, lam = struct.unpack_from("<IQd", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported TPS3 version {version}", location=str(path))
    need = 24 + 8 * (12 + 6 * M)
    if len(data) != need:
        raise FormatError(f"expected {need} bytes, found {len(data)}", location=str(path))
    vals = np.frombuffer(data, dtype="<f8", offset=24).astype(np.float64)
    return TpsModel(
        t=vals[:3].copy(),
        A=vals[3:12].reshape(3, 3).copy(),
        centers=vals[12 : 12 + 3 * M].reshape(M, 3).copy(),
        W=vals[12 + 3 * M :].reshape(M, 3).copy(),
        lam=float(lam),
    )
