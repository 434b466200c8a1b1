import numpy as np
import pytest

from splatinit.baselines import heldout_comparison
from splatinit.errors import SceneGenerationError
from splatinit.geometry import project
from splatinit.pipeline import PipelineConfig, SceneContext, estimated_pointmaps, stage_tracks, stage_triangulate
from splatinit.synth import SceneSpec, evaluate_recovery, generate_scene
from splatinit.tps import build_control_pairs


def test_zero_corruption_plane_keeps_true_depth():
    s = generate_scene(SceneSpec(kind="plane", n_views=3, corruption=0.0))
    for v in s.depths:
        assert np.array_equal(s.depths[v].values, s.true_depths[v].values, equal_nan=True)


def test_generation_is_deterministic():
    spec = SceneSpec(kind="heightfield", corruption=0.1, seed=9)
    a, b = generate_scene(spec), generate_scene(spec)
    for v in a.depths:
        assert a.depths[v].values.tobytes() == b.depths[v].values.tobytes()
        assert a.images[v].tobytes() == b.images[v].tobytes()
    assert a.matches == b.matches
    assert a.sfm.positions.tobytes() == b.sfm.positions.tobytes()


def test_sphere_matches_reproject_onto_one_surface_point():
    s = generate_scene(SceneSpec(kind="sphere", n_views=4, width=96, height=72, match_fraction=0.05, seed=2))
    cams = s.camera_map
    assert s.matches
    worst = 0.0
    for m in s.matches:
        # the query pixel sits on the pixel grid, so its true point is a direct lookup
        i, j = int(m.pixel_a[0]), int(m.pixel_a[1])
        X = s.true_pointmap(m.view_a).points[j, i]
        assert abs(np.linalg.norm(X) - 1.5) < 1e-9
        worst = max(worst, np.linalg.norm(project(cams[m.view_a], X)[0] - m.pixel_a),
                    np.linalg.norm(project(cams[m.view_b], X)[0] - m.pixel_b))
    assert worst < 0.25


def test_corruption_is_recorded_and_invertible():
    s = generate_scene(SceneSpec(kind="sphere", corruption=0.2, seed=3))
    for v in s.depths:
        true = s.true_depths[v].values
        ok = np.isfinite(true)
        assert not np.allclose(s.depths[v].values[ok], true[ok])
        np.testing.assert_allclose(s.uncorrupt(v)[ok], true[ok], rtol=1e-12)


def test_evaluate_recovery_examples():
    s = generate_scene(SceneSpec(kind="sphere"))
    pts = s.true_pointmap(0).valid_points()
    assert evaluate_recovery(s, pts).rms < 1e-12
    off = pts * (1 + 0.1 / 1.5)
    rep = evaluate_recovery(s, off)
    assert rep.rms == pytest.approx(0.1, abs=1e-12) and rep.n_points == len(pts)
    with pytest.raises(ValueError):
        evaluate_recovery(s, np.zeros((0, 3)))


def test_generation_errors():
    with pytest.raises(SceneGenerationError):
        generate_scene(SceneSpec(n_views=1))
    with pytest.raises(SceneGenerationError):
        generate_scene(SceneSpec(width=4))
    with pytest.raises(SceneGenerationError, match="view 0"):
        generate_scene(SceneSpec(kind="sphere", distance=200.0))


def test_heldout_error_falls_with_control_density():
    errs = []
    for fraction in (0.02, 0.08, 0.3):
        s = generate_scene(SceneSpec(kind="heightfield", corruption=0.1, seed=6, width=80, height=60,
                                     match_fraction=fraction))
        ctx, cfg = SceneContext.from_scene(s), PipelineConfig()
        controls, _ = stage_triangulate(ctx, cfg, stage_tracks(ctx, cfg))
        pairs = build_control_pairs(0, controls, estimated_pointmaps(ctx)[0])
        errs.append(heldout_comparison(s.cameras[0], s.depths[0], pairs, seed=0).tps)
    assert errs[0] > errs[1] > errs[2]
