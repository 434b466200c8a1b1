"""Dense, geometry-consistent initialization point clouds for sparse-view Gaussian splatting.

Monocular-depth pointmaps are warped onto triangulated multi-view points with
a 3-D thin-plate spline, then sampled near those points.
"""

from .cbps import PointCloud, SamplingConfig, cbps_sample, downsample, merge_with_sfm, radius_cluster
from .geometry import Camera, DepthMap, Pointmap, SceneScale, backproject_depthmap, backproject_pixel, project, scene_scale
from .pipeline import PipelineConfig, SceneContext, run_pipeline
from .tps import ControlPairs, TpsModel, apply_tps, build_control_pairs, deform_pointmap, fit_tps
from .tracks import PairwiseMatch, Track, build_tracks, multiview_score, select_key_views
from .triangulate import ControlPoint, refine_reprojection, triangulate_all, triangulate_dlt

__version__ = "0.1.0"

__all__ = [
    "apply_tps",
    "backproject_depthmap",
    "backproject_pixel",
    "build_control_pairs",
    "build_tracks",
    "Camera",
    "cbps_sample",
    "ControlPairs",
    "ControlPoint",
    "deform_pointmap",
    "DepthMap",
    "downsample",
    "fit_tps",
    "merge_with_sfm",
    "multiview_score",
    "PairwiseMatch",
    "PipelineConfig",
    "PointCloud",
    "Pointmap",
    "project",
    "radius_cluster",
    "refine_reprojection",
    "run_pipeline",
    "SamplingConfig",
    "scene_scale",
    "SceneContext",
    "SceneScale",
    "select_key_views",
    "TpsModel",
    "Track",
    "triangulate_all",
    "triangulate_dlt",
]
