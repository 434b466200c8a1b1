import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_margin, brute_force_sample, greedy_cluster
from splatinit.cbps import (
    CBP,
    SFM,
    PointCloud,
    SamplingConfig,
    cbps_sample,
    default_radius_fraction,
    downsample,
    merge_with_sfm,
    radius_cluster,
)
from splatinit.geometry import Pointmap


def pointmap_of(points, view=0, valid=None, colors=None):
    pts = np.asarray(points, dtype=float).reshape(1, -1, 3)
    v = np.ones(pts.shape[:2], bool) if valid is None else np.asarray(valid).reshape(1, -1)
    col = None if colors is None else np.asarray(colors, np.uint8).reshape(1, -1, 3)
    return Pointmap(view=view, points=pts, valid=v, colors=col)


def test_large_radius_returns_every_valid_point():
    r = np.random.default_rng(0)
    pts = r.uniform(-1, 1, (50, 3))
    valid = r.random(50) > 0.2
    out = cbps_sample([pointmap_of(pts, valid=valid)], r.uniform(-1, 1, (3, 3)), r=10.0)
    np.testing.assert_array_equal(out.positions, pts[valid])
    assert (out.tags == CBP).all()


def test_zero_radius_is_inclusive():
    pts = np.array([[0.0, 0, 0], [1, 1, 1], [1e-12, 0, 0]])
    out = cbps_sample([pointmap_of(pts)], np.array([[1.0, 1, 1]]), r=0.0)
    np.testing.assert_array_equal(out.positions, [[1, 1, 1]])


def test_exact_boundary_distance_is_kept():
    pts = np.array([[0.5, 0, 0], [0.5000001, 0, 0], [0, 0.25, 0]])
    out = cbps_sample([pointmap_of(pts)], np.zeros((1, 3)), r=0.5)
    np.testing.assert_array_equal(out.positions, pts[[0, 2]])


def test_empty_controls_warns(caplog):
    out = cbps_sample([pointmap_of(np.zeros((4, 3)))], np.zeros((0, 3)), r=1.0)
    assert len(out) == 0
    assert "no control points" in caplog.text


def test_sample_matches_brute_force():
    r = np.random.default_rng(1)
    pts = r.uniform(-1, 1, (1000, 3))
    ctrl = r.uniform(-1, 1, (50, 3))
    S = 2.0
    out = cbps_sample([pointmap_of(pts)], ctrl, r=S / 8)
    np.testing.assert_array_equal(out.positions, pts[brute_force_sample(pts, ctrl, S / 8)])


def test_sample_orders_by_view_and_keeps_colors():
    a = pointmap_of([[0, 0, 0], [5, 5, 5]], view=2, colors=[[1, 2, 3], [4, 5, 6]])
    b = pointmap_of([[0.1, 0, 0]], view=1, colors=[[7, 8, 9]])
    out = cbps_sample([a, b], np.zeros((1, 3)), r=0.5)
    np.testing.assert_array_equal(out.colors, [[7, 8, 9], [1, 2, 3]])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), r=st.floats(0.0, 0.6))
def test_sample_property_equals_brute_force_and_nested(seed, r):
    rng = np.random.default_rng(seed)
    pts = np.round(rng.uniform(-1, 1, (200, 3)), 1)  # lattice values create exact ties
    ctrl = np.round(rng.uniform(-1, 1, (10, 3)), 1)
    out = cbps_sample([pointmap_of(pts)], ctrl, r=r)
    np.testing.assert_array_equal(out.positions, pts[brute_force_sample(pts, ctrl, r)])
    assert len(cbps_sample([pointmap_of(pts)], ctrl, r=r + 0.1)) >= len(out)


def test_margin_example():
    sfm = PointCloud.from_points([[0.0, 0, 0]], tag=SFM)
    sampled = PointCloud.from_points([[0.04, 0, 0], [0.06, 0, 0], [0.05, 0, 0]])
    out = merge_with_sfm(sfm, sampled, margin=0.05)
    np.testing.assert_array_equal(out.positions, [[0, 0, 0], [0.06, 0, 0]])
    assert out.tags.tolist() == [SFM, CBP]


def test_margin_empty_sfm_is_passthrough():
    sampled = PointCloud.from_points(np.random.default_rng(2).normal(size=(10, 3)))
    out = merge_with_sfm(PointCloud.empty(), sampled, 0.05)
    np.testing.assert_array_equal(out.positions, sampled.positions)


def test_margin_matches_brute_force():
    r = np.random.default_rng(3)
    sampled = r.uniform(0, 1, (500, 3))
    sfm = r.uniform(0, 1, (50, 3))
    out = merge_with_sfm(PointCloud.from_points(sfm, tag=SFM), PointCloud.from_points(sampled), 0.1)
    keep = brute_force_margin(sampled, sfm, 0.1)
    np.testing.assert_array_equal(out.positions, np.vstack([sfm, sampled[keep]]))


def test_cluster_example():
    c = PointCloud.from_points([[0.0, 0, 0], [0.005, 0, 0]])
    np.testing.assert_array_equal(radius_cluster(c, 0.01).positions, [[0, 0, 0]])


def test_cluster_identity_when_spread_out():
    c = PointCloud.from_points(np.arange(30, dtype=float)[:, None] * [1, 0, 0] * 0.02)
    assert len(radius_cluster(c, 0.01)) == 30


def test_cluster_matches_greedy_oracle():
    r = np.random.default_rng(4)
    pts = r.uniform(0, 0.2, (300, 3))
    cols = r.integers(0, 255, (300, 3))
    out = radius_cluster(PointCloud.from_points(pts, cols), 0.03)
    keep = greedy_cluster(pts, 0.03)
    np.testing.assert_array_equal(out.positions, pts[keep])
    np.testing.assert_array_equal(out.colors, cols[keep])
    d = np.linalg.norm(out.positions[:, None] - out.positions[None], axis=-1)
    assert d[~np.eye(len(d), dtype=bool)].min() > 0.03


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_cluster_property_with_chains(seed):
    # collinear lattice points make chained suppression decisions matter
    rng = np.random.default_rng(seed)
    pts = np.c_[rng.integers(0, 12, 80) * 0.01, np.zeros(80), np.zeros(80)]
    out = radius_cluster(PointCloud.from_points(pts), 0.01)
    np.testing.assert_array_equal(out.positions, pts[greedy_cluster(pts, 0.01)])


def test_downsample_identity_below_cap():
    c = PointCloud.from_points(np.zeros((100, 3)))
    assert downsample(c, 200) is c


def test_downsample_exact_cap_and_determinism():
    r = np.random.default_rng(5)
    c = PointCloud.from_points(r.normal(size=(60_000, 3)))
    a, b = downsample(c, 30_000, seed=1), downsample(c, 30_000, seed=1)
    assert len(a) == 30_000
    assert a.positions.tobytes() == b.positions.tobytes()
    assert downsample(c, 30_000, seed=2).positions.tobytes() != a.positions.tobytes()


def test_downsample_keeps_every_sfm_point():
    sfm = PointCloud.from_points(np.ones((40, 3)), tag=SFM)
    cbp = PointCloud.from_points(np.zeros((100, 3)))
    out = downsample(PointCloud.concat(sfm, cbp), 10, seed=0)
    assert (out.tags == SFM).sum() == 40 and (out.tags == CBP).sum() == 10


def test_config_validation_and_defaults():
    cfg = SamplingConfig()
    assert (cfg.margin, cfg.cluster_radius, cfg.max_points) == (0.05, 0.01, 30_000)
    with pytest.raises(ValueError):
        SamplingConfig(margin=0)
    with pytest.raises(ValueError):
        SamplingConfig(max_points=0)
    assert default_radius_fraction(3) == 1 / 8
    assert default_radius_fraction(9) == 1 / 16


def test_point_cloud_rejects_nonfinite():
    with pytest.raises(ValueError):
        PointCloud.from_points([[np.nan, 0, 0]])
