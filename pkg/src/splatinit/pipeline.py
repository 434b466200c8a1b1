"""Stage functions for the full initialization run, shared by the CLI and tests."""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

from .cbps import (
    PointCloud,
    cbps_sample,
    default_radius_fraction,
    downsample,
    merge_with_sfm,
    radius_cluster,
)
from .errors import InsufficientControlsError, RankDeficientError
from .geometry import backproject_depthmap, scene_scale
from .tps import build_control_pairs, deform_pointmap, fit_tps
from .tracks import build_tracks, default_k, filter_matches_to_key_views
from .triangulate import triangulate_all

log = logging.getLogger(__name__)

STAGES = ("correspondences", "triangulation", "tps", "cbps", "io")


@dataclass
class SceneContext:
    cameras: list
    depths: dict
    matches: list
    images: dict = field(default_factory=dict)
    sfm: PointCloud = field(default_factory=PointCloud.empty)

    @property
    def camera_map(self):
        return {c.id: c for c in self.cameras}

    @property
    def view_ids(self):
        return sorted(c.id for c in self.cameras)

    @classmethod
    def from_scene(cls, scene):
        """Pipeline inputs for a synthetic scene (estimated depth, not the truth)."""
        return cls(cameras=scene.cameras, depths=scene.depths, matches=scene.matches,
                   images=scene.images, sfm=scene.sfm)


@dataclass(frozen=True)
class PipelineConfig:
    radius_fraction: float | None = None
    margin: float = 0.05
    cluster_radius: float = 0.01
    max_points: int = 30_000
    max_reproj_px: float = 2.0
    k: int | None = None
    lam: float = 0.0
    seed: int = 0
    quantization: float = 1.0

    @classmethod
    def from_manifest(cls, m):
        return cls(
            radius_fraction=m.radius_fraction, margin=m.margin, cluster_radius=m.cluster_radius,
            max_points=m.max_points, max_reproj_px=m.max_reproj_px, k=m.k, lam=m.lam,
            seed=m.seed, quantization=m.quantization,
        )

    def key_view_count(self, n_views):
        return self.k if self.k is not None else default_k(n_views)

    def sampling_fraction(self, n_views):
        return self.radius_fraction if self.radius_fraction is not None else default_radius_fraction(n_views)


class StageTimer:
    """Accumulates wall time per stage; always reports all five stages."""

    def __init__(self):
        self.seconds = {s: 0.0 for s in STAGES}
        self.failed = None

    @contextmanager
    def __call__(self, stage):
        if stage not in self.seconds:
            raise KeyError(f"unknown stage {stage!r}")
        t0 = time.perf_counter()
        try:
            yield
        except BaseException:
            self.failed = self.failed or stage
            raise
        finally:
            self.seconds[stage] += time.perf_counter() - t0

    @property
    def total(self):
        return sum(self.seconds.values())

    def table(self) -> str:
        rows = [f"{'stage':<16}{'seconds':>10}"]
        rows += [f"{s:<16}{self.seconds[s]:>10.3f}" for s in STAGES]
        rows.append(f"{'total':<16}{self.total:>10.3f}")
        return "\n".join(rows)


def stage_tracks(ctx: SceneContext, cfg: PipelineConfig):
    matches = ctx.matches
    if len(ctx.cameras) > 1:
        matches = filter_matches_to_key_views(matches, ctx.cameras, cfg.key_view_count(len(ctx.cameras)))
    return build_tracks(matches, cfg.quantization)


def stage_triangulate(ctx: SceneContext, cfg: PipelineConfig, tracks):
    return triangulate_all(tracks, ctx.camera_map, cfg.max_reproj_px)


def estimated_pointmaps(ctx: SceneContext):
    cams = ctx.camera_map
    return {v: backproject_depthmap(cams[v], ctx.depths[v], ctx.images.get(v)) for v in ctx.view_ids}


def stage_tps(ctx: SceneContext, cfg: PipelineConfig, controls, pointmaps=None):
    """One warp per view. Views without enough control pairs are skipped.

    Returns ``(models, pairs_per_view)``.
    """
    S = scene_scale(ctx.cameras).S
    pointmaps = pointmaps or estimated_pointmaps(ctx)
    models, n_pairs = {}, {}
    for v in ctx.view_ids:
        try:
            try:
                pairs = build_control_pairs(v, controls, pointmaps[v], query_only=True)
                if len(pairs) < 4:
                    raise InsufficientControlsError("too few query-grid pairs")
            except InsufficientControlsError:
                pairs = build_control_pairs(v, controls, pointmaps[v], query_only=False)
            models[v] = fit_tps(pairs, lam=cfg.lam, scale=S)
            n_pairs[v] = len(pairs)
        except (InsufficientControlsError, RankDeficientError) as exc:
            log.warning("skipping view %d: %s", v, exc)
            n_pairs[v] = 0
    return models, n_pairs


def stage_cbps(ctx: SceneContext, cfg: PipelineConfig, controls, models, pointmaps=None):
    """Deform, sample near controls, merge with SfM, thin and cap. Returns ``(cloud, counts)``."""
    S = scene_scale(ctx.cameras).S
    pointmaps = pointmaps or estimated_pointmaps(ctx)
    cbp = [deform_pointmap(models[v], pointmaps[v]) for v in sorted(models)]
    r = cfg.sampling_fraction(len(ctx.cameras)) * S
    sampled = cbps_sample(cbp, controls, r)
    merged = merge_with_sfm(ctx.sfm, sampled, cfg.margin)
    clustered = radius_cluster(merged, cfg.cluster_radius)
    final = downsample(clustered, cfg.max_points, cfg.seed)
    counts = {
        "radius": r,
        "sampled": len(sampled),
        "merged": len(merged),
        "clustered": len(clustered),
        "final": len(final),
        "sfm": len(ctx.sfm),
    }
    return final, counts


@dataclass
class PipelineResult:
    cloud: PointCloud
    tracks: list
    controls: list
    models: dict
    summary: dict
    timer: StageTimer


def run_pipeline(ctx: SceneContext, cfg: PipelineConfig | None = None, timer: StageTimer | None = None):
    cfg = cfg or PipelineConfig()
    timer = timer or StageTimer()
    with timer("correspondences"):
        tracks = stage_tracks(ctx, cfg)
    with timer("triangulation"):
        controls, rejected = stage_triangulate(ctx, cfg, tracks)
    with timer("tps"):
        pointmaps = estimated_pointmaps(ctx)
        models, n_pairs = stage_tps(ctx, cfg, controls, pointmaps)
    with timer("cbps"):
        cloud, counts = stage_cbps(ctx, cfg, controls, models, pointmaps)
    summary = {
        "tracks": len(tracks),
        "controls_accepted": len(controls),
        "controls_rejected": sum(rejected.values()),
        "pairs_per_view": n_pairs,
        "views_skipped": sorted(v for v in ctx.view_ids if v not in models),
        **counts,
    }
    return PipelineResult(cloud=cloud, tracks=tracks, controls=controls, models=models, summary=summary, timer=timer)
