import struct

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from conftest import make_camera
from splatinit import io
from splatinit.cbps import CBP, SFM, PointCloud
from splatinit.errors import FormatError, MissingArtifactError, SplatInitError, UnsupportedModelError
from splatinit.geometry import DepthMap
from splatinit.tracks import PairwiseMatch, Track
from splatinit.triangulate import ControlPoint


def write(path, text):
    path.write_text(text)
    return path


def test_colmap_simple_pinhole_example(tmp_path):
    cams = write(tmp_path / "cameras.txt", "# header\n1 SIMPLE_PINHOLE 100 100 100 50 50\n")
    imgs = write(tmp_path / "images.txt", "# header\n7 1 0 0 0 0 0 0 1 a.png\n\n")
    (c,) = io.read_colmap_cameras(cams, imgs)
    np.testing.assert_array_equal(c.K, [[100, 0, 49.5], [0, 100, 49.5], [0, 0, 1]])
    np.testing.assert_array_equal(c.R, np.eye(3))
    assert c.id == 7 and (c.width, c.height) == (100, 100)


def test_colmap_images_points_line_is_skipped(tmp_path):
    cams = write(tmp_path / "cameras.txt", "1 PINHOLE 64 48 60 61 32 24\n")
    imgs = write(tmp_path / "images.txt",
                 "1 1 0 0 0 0 0 0 1 a.png\n10.0 20.0 -1 11.0 21.0 5\n2 1 0 0 0 1 0 0 1 b.png\n\n")
    cams_out = io.read_colmap_cameras(cams, imgs)
    assert [c.id for c in cams_out] == [1, 2]
    assert cams_out[0].K[1, 1] == 61


def test_colmap_truncated_line_reports_line_number(tmp_path):
    cams = write(tmp_path / "cameras.txt", "1 SIMPLE_PINHOLE 100 100 100 50 50\n")
    imgs = write(tmp_path / "images.txt", "# c\n# c\n1 1 0 0 0 0 0\n")
    with pytest.raises(FormatError) as exc:
        io.read_colmap_cameras(cams, imgs)
    assert exc.value.location.endswith("images.txt:3")


def test_colmap_unsupported_model(tmp_path):
    cams = write(tmp_path / "cameras.txt", "1 OPENCV 100 100 100 100 50 50 0 0 0 0\n")
    imgs = write(tmp_path / "images.txt", "")
    with pytest.raises(UnsupportedModelError, match="OPENCV"):
        io.read_colmap_cameras(cams, imgs)


def test_colmap_round_trip(tmp_path, ring_cameras):
    io.write_colmap_text(ring_cameras, tmp_path)
    back = io.read_cameras(tmp_path)
    for a, b in zip(ring_cameras, back):
        np.testing.assert_allclose(a.K, b.K, atol=1e-12)
        np.testing.assert_allclose(a.R, b.R, atol=1e-12)
        np.testing.assert_allclose(a.t, b.t, atol=1e-12)


def test_quaternion_round_trip():
    for i in range(20):
        R = Rotation.random(random_state=i).as_matrix()
        np.testing.assert_allclose(io.qvec_to_rotmat(io.rotmat_to_qvec(R)), R, atol=1e-12)
    np.testing.assert_array_equal(io.qvec_to_rotmat([1, 0, 0, 0]), np.eye(3))


def test_cameras_json_round_trip(tmp_path, ring_cameras):
    io.write_cameras_json(ring_cameras, tmp_path / "c.json")
    for a, b in zip(ring_cameras, io.read_cameras(tmp_path / "c.json")):
        assert a.id == b.id
        assert np.array_equal(a.K, b.K) and np.array_equal(a.R, b.R) and np.array_equal(a.t, b.t)


def test_pfm_hand_encoded(tmp_path):
    # bottom row first: (3, 4) then (1, 2)
    data = b"Pf\n2 2\n-1.0\n" + struct.pack("<4f", 3, 4, 1, 2)
    (tmp_path / "d.pfm").write_bytes(data)
    np.testing.assert_array_equal(io.read_depth_pfm(tmp_path / "d.pfm").values, [[1, 2], [3, 4]])
    big = b"Pf\n2 2\n1.0\n" + struct.pack(">4f", 3, 4, 1, 2)
    (tmp_path / "b.pfm").write_bytes(big)
    np.testing.assert_array_equal(io.read_depth_pfm(tmp_path / "b.pfm").values, [[1, 2], [3, 4]])


def test_pfm_round_trip_is_bit_identical(tmp_path):
    vals = np.random.default_rng(0).uniform(0.5, 9, (5, 7)).astype(np.float32).astype(np.float64)
    vals[1, 2] = np.nan
    for le in (True, False):
        io.write_depth_pfm(DepthMap(0, vals), tmp_path / "x.pfm", little_endian=le)
        back = io.read_depth_pfm(tmp_path / "x.pfm").values
        assert back.tobytes() == vals.tobytes()


@pytest.mark.parametrize("blob", [
    b"PF\n2 2\n-1.0\n" + bytes(48),
    b"Pf\n2 x\n-1.0\n" + bytes(16),
    b"Pf\n2 2\n-1.0\n" + bytes(12),
    b"Pf\n2 2\n",
])
def test_pfm_format_errors(tmp_path, blob):
    (tmp_path / "bad.pfm").write_bytes(blob)
    with pytest.raises(FormatError):
        io.read_depth_pfm(tmp_path / "bad.pfm")


def test_raw_depth_round_trip(tmp_path):
    cam = make_camera(3, (0, 0, 5), width=6, height=4)
    vals = np.arange(24, dtype=np.float64).reshape(4, 6)
    io.write_depth_raw(DepthMap(3, vals), tmp_path / "d.raw")
    back = io.read_depth(tmp_path / "d.raw", cam)
    assert back.view == 3 and np.array_equal(back.values, vals)
    with pytest.raises(FormatError):
        io.read_depth_raw(tmp_path / "d.raw", 5, 4)


def test_matches_parsing(tmp_path):
    p = write(tmp_path / "m.txt", "# comment\n0 1 10.5 20.5 11.0 21.0 0.9\n\n1 2 1 2 3 4\n")
    ms, rejected = io.read_matches(p)
    assert ms[0] == PairwiseMatch(0, 1, (10.5, 20.5), (11.0, 21.0), 0.9)
    assert ms[1].confidence == 1.0 and rejected == 0


def test_matches_comment_only(tmp_path):
    assert io.read_matches(write(tmp_path / "m.txt", "# nothing\n"))[0] == []


def test_matches_out_of_bounds_rejected(tmp_path):
    cams = [make_camera(0, (5, 0, 1)), make_camera(1, (0, 5, 1))]
    p = write(tmp_path / "m.txt", "0 1 10 10 20 20\n0 1 10 10 200 20\n0 1 -0.6 10 20 20\n")
    ms, rejected = io.read_matches(p, cams)
    assert len(ms) == 1 and rejected == 2


@pytest.mark.parametrize("line", ["0 1 1 2 3", "0 1 a 2 3 4", "0 0 1 2 3 4", "0 1 1 2 3 4 1.5"])
def test_matches_malformed_line_number(tmp_path, line):
    p = write(tmp_path / "m.txt", f"0 1 1 2 3 4\n{line}\n")
    with pytest.raises(FormatError) as exc:
        io.read_matches(p)
    assert exc.value.location.endswith(":2")


def test_matches_round_trip(tmp_path):
    ms = [PairwiseMatch(0, 2, (0.1, 1 / 3), (5.0, 7.25), 0.5), PairwiseMatch(2, 1, (3.0, 4.0), (1e-7, 2.0))]
    io.write_matches(ms, tmp_path / "m.txt")
    assert io.read_matches(tmp_path / "m.txt")[0] == ms


def test_ply_single_point_size(tmp_path):
    cloud = PointCloud(np.zeros((1, 3)), np.full((1, 3), 255, np.uint8), np.zeros(1, np.uint8))
    io.write_ply(cloud, tmp_path / "p.ply")
    data = (tmp_path / "p.ply").read_bytes()
    header = (
        b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
        b"property float x\nproperty float y\nproperty float z\n"
        b"property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    )
    payload = struct.pack("<3f3B", 0, 0, 0, 255, 255, 255)
    assert len(payload) == 15
    assert data == header + payload
    assert len(data) == len(header) + 15


def test_ply_round_trip_and_determinism(tmp_path):
    r = np.random.default_rng(1)
    cloud = PointCloud(r.normal(size=(100, 3)), r.integers(0, 256, (100, 3)), np.full(100, CBP))
    io.write_ply(cloud, tmp_path / "a.ply")
    io.write_ply(cloud, tmp_path / "b.ply")
    assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()
    back = io.read_ply(tmp_path / "a.ply")
    np.testing.assert_array_equal(back.positions, cloud.positions.astype(np.float32))
    np.testing.assert_array_equal(back.colors, cloud.colors)
    assert (back.tags == SFM).all()


def test_ply_empty(tmp_path):
    io.write_ply(PointCloud.empty(), tmp_path / "e.ply")
    assert b"element vertex 0\n" in (tmp_path / "e.ply").read_bytes()
    assert len(io.read_ply(tmp_path / "e.ply")) == 0


def test_ply_ascii_and_colmap_points(tmp_path):
    p = write(tmp_path / "a.ply", "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
              "property float z\nend_header\n1 2 3\n4 5 6\n")
    c = io.read_sfm_cloud(p)
    np.testing.assert_array_equal(c.positions, [[1, 2, 3], [4, 5, 6]])
    assert (c.colors == 128).all()
    pts = write(tmp_path / "points3D.txt", "# id x y z r g b err track\n1 0.5 1 2 10 20 30 0.1 1 2\n")
    c = io.read_sfm_cloud(pts)
    np.testing.assert_array_equal(c.colors, [[10, 20, 30]])


def test_image_round_trip(tmp_path):
    img = np.random.default_rng(2).integers(0, 256, (5, 7, 3)).astype(np.uint8)
    io.write_image(img, tmp_path / "i.png")
    assert np.array_equal(io.read_image(tmp_path / "i.png"), img)


def test_tracks_and_controls_round_trip(tmp_path):
    t = Track(observations={0: (1.5, 2.0), 3: (4.0, 5.25)}, anchor=(0, (1.5, 2.0)), query_views=frozenset({0}))
    io.write_tracks([t], tmp_path / "t.json")
    assert io.read_tracks(tmp_path / "t.json") == [t]
    cp = ControlPoint(position=np.array([0.1, 1 / 3, 2.0]), track=t, reproj_error=0.25, n_views=2, track_index=4)
    io.write_controls([cp], tmp_path / "c.json", {"rejected": {"reprojection": 1}})
    (back,), extra = io.read_controls(tmp_path / "c.json")
    assert np.array_equal(back.position, cp.position) and back.track == t and back.track_index == 4
    assert extra == {"rejected": {"reprojection": 1}}
    with pytest.raises(MissingArtifactError):
        io.read_controls(tmp_path / "none.json")


def test_manifest_resolution_and_missing_file(tmp_path):
    for name in ("c.json", "m.txt", "d0.pfm"):
        (tmp_path / name).write_text("")
    io.write_json({"cameras": "c.json", "matches": "m.txt", "depths": {"0": "d0.pfm"}, "margin": 0.1},
                  tmp_path / "job.json")
    m = io.load_manifest(tmp_path / "job.json", margin=0.2)
    assert m.depths == {0: tmp_path / "d0.pfm"} and m.margin == 0.2 and m.max_points == 30_000
    (tmp_path / "d0.pfm").unlink()
    with pytest.raises(MissingArtifactError, match="d0.pfm"):
        io.load_manifest(tmp_path / "job.json")
    io.write_json({"cameras": "c.json", "bogus": 1}, tmp_path / "bad.json")
    with pytest.raises(FormatError):
        io.load_manifest(tmp_path / "bad.json")


READERS = {
    "pfm": lambda p: io.read_depth_pfm(p),
    "ply": lambda p: io.read_ply(p),
    "matches": lambda p: io.read_matches(p),
    "points3d": lambda p: io.read_colmap_points3d(p),
    "cameras_json": lambda p: io.read_cameras_json(p),
}
SEEDS = {
    "pfm": b"Pf\n2 2\n-1.0\n" + bytes(16),
    "ply": b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\n"
           b"end_header\n1 2 3\n",
    "matches": b"0 1 1 2 3 4 0.5\n",
    "points3d": b"1 0.5 1 2 10 20 30 0.1\n",
    "cameras_json": b'{"cameras": [{"id": 0, "width": 4, "height": 4, "K": [[1,0,1],[0,1,1],[0,0,1]],'
                    b' "R": [[1,0,0],[0,1,0],[0,0,1]], "t": [0,0,0]}]}',
}


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(kind=st.sampled_from(sorted(READERS)), cut=st.integers(0, 200), junk=st.binary(max_size=12),
       pos=st.integers(0, 200))
def test_parsers_fail_with_a_located_error(tmp_path, kind, cut, junk, pos):
    seed = SEEDS[kind]
    pos = min(pos, len(seed))
    blob = (seed[:pos] + junk + seed[pos:])[: max(cut, 1)]
    p = tmp_path / f"fuzz.{kind}"
    p.write_bytes(blob)
    try:
        READERS[kind](p)
    except SplatInitError as exc:
        assert str(p) in str(exc)
