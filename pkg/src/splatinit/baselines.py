"""Global scale-and-offset depth alignment, the baseline TPS is compared against."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RankDeficientError
from .geometry import Camera, DepthMap, pixel_rays
from .tps import ControlPairs, apply_tps, fit_tps


@dataclass(frozen=True)
class DepthAlignment:
    scale: float
    offset: float
    rms: float

    def __call__(self, d):
        return self.scale * np.asarray(d, dtype=np.float64) + self.offset


def fit_linear_scaling(estimated, reference) -> DepthAlignment:
    """Closed-form least squares for ``scale * estimated + offset ~ reference``."""
    est = np.asarray(estimated, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if est.shape != ref.shape or est.ndim != 1 or len(est) < 2:
        raise ValueError("need two equal-length 1-D depth lists with at least two entries")
    de = est - est.mean()
    var = de @ de
    if var <= 1e-300 or np.ptp(est) == 0:
        raise RankDeficientError("estimated depths are all equal; scale is undetermined")
    s = (de @ (ref - ref.mean())) / var
    b = ref.mean() - s * est.mean()
    resid = s * est + b - ref
    return DepthAlignment(scale=float(s), offset=float(b), rms=float(np.sqrt(np.mean(resid**2))))


def apply_linear_scaling(alignment: DepthAlignment, depth: DepthMap) -> DepthMap:
    """Rescale valid depths; results that are not positive become invalid (NaN)."""
    out = np.where(depth.valid, alignment(depth.values), np.nan)
    with np.errstate(invalid="ignore"):
        out[~(out > 0)] = np.nan
    return DepthMap(view=depth.view, values=out)


def reference_depths(camera: Camera, positions) -> np.ndarray:
    """Camera-frame z of world points, the sparse depth LS aligns to."""
    return camera.world_to_camera(np.asarray(positions, dtype=np.float64))[:, 2]


def _depth_at(depth: DepthMap, pixels) -> np.ndarray:
    idx = np.floor(np.asarray(pixels) + 0.5).astype(int)
    return depth.values[idx[:, 1], idx[:, 0]]


def _backproject_at(camera: Camera, pixels, d) -> np.ndarray:
    idx = np.floor(np.asarray(pixels) + 0.5).astype(int)
    rays = pixel_rays(camera)[idx[:, 1], idx[:, 0]]
    return camera.camera_to_world(rays * np.asarray(d)[:, None])


@dataclass(frozen=True)
class HeldOutErrors:
    tps: float
    linear_scaling: float
    n_train: int
    n_test: int


def heldout_comparison(camera: Camera, depth: DepthMap, pairs: ControlPairs, holdout: float = 0.2,
                       seed: int = 0, lam: float = 0.0) -> HeldOutErrors:
    """RMS 3-D error at held-out control points after TPS vs linear-scaling alignment.

    ``pairs`` must carry the pixels it was sampled at; both methods are fitted
    on the same training subset.
    """
    n = len(pairs)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_test = max(1, int(round(holdout * n)))
    test, train = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    tr, te = pairs.subset(train), pairs.subset(test)

    model = fit_tps(tr, lam=lam)
    tps_err = np.sqrt(np.mean(np.sum((apply_tps(model, te.sources) - te.targets) ** 2, axis=1)))

    ls = fit_linear_scaling(_depth_at(depth, tr.pixels), reference_depths(camera, tr.targets))
    pred = _backproject_at(camera, te.pixels, ls(_depth_at(depth, te.pixels)))
    ls_err = np.sqrt(np.mean(np.sum((pred - te.targets) ** 2, axis=1)))
    return HeldOutErrors(tps=float(tps_err), linear_scaling=float(ls_err), n_train=len(train), n_test=n_test)
