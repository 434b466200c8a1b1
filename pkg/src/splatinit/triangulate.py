"""Track triangulation: linear DLT estimate, then Levenberg-Marquardt on reprojection error."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateBaselineError,
    InvalidInputError,
    NumericalError,
    PointAtInfinityError,
)
from .geometry import BEHIND_EPS, Camera
from .tracks import Track

log = logging.getLogger(__name__)

LM_LAMBDA0 = 1e-3
LM_MAX_ITER = 50


@dataclass(frozen=True, eq=False)
class ControlPoint:
    position: np.ndarray
    track: Track
    reproj_error: float
    n_views: int
    track_index: int = -1


def _observing(track: Track, cameras):
    try:
        return [(cameras[v], np.asarray(p, dtype=np.float64)) for v, p in sorted(track.observations.items())]
    except KeyError as exc:
        raise InvalidInputError(f"track observes unknown view {exc.args[0]}") from None


def _stack(track: Track, cameras):
    """Projection matrices ``(n, 3, 4)`` and pixels ``(n, 2)`` in view order."""
    obs = _observing(track, cameras)
    Ps = np.array([cam.P for cam, _ in obs])
    pix = np.array([p for _, p in obs])
    return obs, Ps, pix


def triangulate_dlt(track: Track, cameras) -> np.ndarray:
    """Homogeneous least-squares point from stacked ``p x (P X) = 0`` rows.

    Pixels are centred and divided by the image diagonal before stacking.
    """
    obs, Ps, pix = _stack(track, cameras)
    if len(obs) < 2:
        raise InvalidInputError("triangulation needs at least two observations")
    centers = np.array([cam.center for cam, _ in obs])
    spread = np.abs(centers - centers[0]).max()
    if spread <= 1e-12 * (1.0 + np.abs(centers).max()):
        raise DegenerateBaselineError("all observing cameras share one centre")

    size = np.array([(cam.width, cam.height) for cam, _ in obs], dtype=np.float64)
    diag = np.hypot(size[:, 0], size[:, 1])[:, None]
    c = (size - 1) / 2.0
    # T = [[1/d, 0, -cx/d], [0, 1/d, -cy/d], [0, 0, 1]] applied to P and to the pixel
    TP01 = (Ps[:, :2] - c[:, :, None] * Ps[:, 2:3]) / diag[:, :, None]
    xy = (pix - c) / diag
    rows = xy[:, :, None] * Ps[:, 2:3] - TP01
    A = rows.reshape(-1, 4)
    _, _, vt = np.linalg.svd(A)
    Xh = vt[-1] / np.linalg.norm(vt[-1])
    if abs(Xh[3]) < 1e-12:
        raise PointAtInfinityError("DLT solution lies at infinity")
    return Xh[:3] / Xh[3]


def projection_jacobian(camera: Camera, X) -> tuple[np.ndarray, np.ndarray]:
    """Pixel ``pi(P X)`` and its 2x3 derivative with respect to ``X``."""
    M = camera.K @ camera.R
    y = M @ X + camera.K @ camera.t
    u, v = y[0] / y[2], y[1] / y[2]
    J = np.stack([M[0] - u * M[2], M[1] - v * M[2]]) / y[2]
    return np.array([u, v]), J


def _residuals(X, Ps, pix):
    """Stacked residuals and Jacobian; ``(None, None)`` if X is behind any camera.

    The third row of ``K [R | t]`` is ``[R_3 | t_3]`` because ``K[2] = (0, 0, 1)``,
    so ``y_z`` is the camera-frame depth.
    """
    M = Ps[:, :, :3]
    y = M @ X + Ps[:, :, 3]
    z = y[:, 2]
    if np.any(z <= BEHIND_EPS):
        return None, None
    uv = y[:, :2] / z[:, None]
    J = (M[:, :2] - uv[:, :, None] * M[:, 2:3]) / z[:, None, None]
    return (uv - pix).reshape(-1), J.reshape(-1, 3)


def reprojection_cost(X, track: Track, cameras) -> float:
    """Sum of squared pixel residuals; ``inf`` when behind any observing camera."""
    _, Ps, pix = _stack(track, cameras)
    r, _ = _residuals(np.asarray(X, dtype=np.float64), Ps, pix)
    return float("inf") if r is None else float(r @ r)


def reprojection_errors(X, track: Track, cameras) -> np.ndarray:
    """Per-observation pixel distance, NaN where the point is behind the camera."""
    _, Ps, pix = _stack(track, cameras)
    y = Ps[:, :, :3] @ np.asarray(X, dtype=np.float64) + Ps[:, :, 3]
    z = y[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.linalg.norm(y[:, :2] / z[:, None] - pix, axis=1)
    return np.where(z > BEHIND_EPS, err, np.nan)


def refine_reprojection(X0, track: Track, cameras, max_iter: int = LM_MAX_ITER) -> np.ndarray:
    """Levenberg-Marquardt on the summed squared reprojection error.

    Only cost-decreasing steps are accepted, so the result never scores worse
    than ``X0``.
    """
    _, Ps, pix = _stack(track, cameras)
    X = np.array(X0, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("initial point is not finite")
    r, J = _residuals(X, Ps, pix)
    if r is None or not np.all(np.isfinite(r)):
        raise InvalidInputError("reprojection cost is not finite at the initial point")
    cost = r @ r
    lam = LM_LAMBDA0
    for _ in range(max_iter):
        g = J.T @ r
        H = J.T @ J
        A = H + lam * np.diag(np.diag(H) + 1e-12)
        try:
            step = -np.linalg.solve(A, g)
        except np.linalg.LinAlgError:
            lam *= 10
            continue
        X_new = X + step
        r_new, J_new = _residuals(X_new, Ps, pix)
        cost_new = np.inf if r_new is None else r_new @ r_new
        if cost_new < cost:
            decrease = cost - cost_new
            X, r, J, cost = X_new, r_new, J_new, cost_new
            lam *= 0.1
            if decrease < 1e-12:
                break
        else:
            lam *= 10
        if np.linalg.norm(step) < 1e-10 * (1 + np.linalg.norm(X)):
            break
    return X


def triangulate_all(tracks, cameras, max_reproj_error: float = 2.0):
    """Triangulate every track and keep the reliable ones.

    Returns ``(controls, rejected)`` where ``rejected`` counts failures by
    reason (``degenerate``, ``cheirality``, ``reprojection``).
    """
    controls = []
    rejected = Counter()
    for idx, track in enumerate(tracks):
        try:
            X0 = triangulate_dlt(track, cameras)
        except (NumericalError, InvalidInputError):
            rejected["degenerate"] += 1
            continue
        if not np.isfinite(reprojection_cost(X0, track, cameras)):
            rejected["cheirality"] += 1
            continue
        X = refine_reprojection(X0, track, cameras)
        errs = reprojection_errors(X, track, cameras)
        if np.isnan(errs).any():
            rejected["cheirality"] += 1
            continue
        mean_err = float(errs.mean())
        if not mean_err <= max_reproj_error:
            rejected["reprojection"] += 1
            continue
        controls.append(
            ControlPoint(position=X, track=track, reproj_error=mean_err, n_views=len(track), track_index=idx)
        )
    if rejected:
        log.info("triangulation kept %d of %d tracks; rejected %s", len(controls), len(tracks), dict(rejected))
    return controls, rejected
