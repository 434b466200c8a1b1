"""File formats: cameras, depth maps, images, matches, point clouds and stage artifacts."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .cbps import SFM, PointCloud
from .errors import FormatError, InvalidInputError, MissingArtifactError, UnsupportedModelError
from .geometry import Camera, DepthMap
from .tracks import PairwiseMatch, Track
from .triangulate import ControlPoint

log = logging.getLogger(__name__)


def write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=False) + "\n")


def _read_json(path):
    try:
        data = json.loads(Path(path).read_bytes().decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise FormatError(f"not UTF-8 text ({exc.reason})", location=str(path)) from None
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, location=f"{path}:{exc.lineno}") from None
    if not isinstance(data, dict):
        raise FormatError("expected a JSON object", location=str(path))
    return data


# -- cameras -----------------------------------------------------------------

def write_cameras_json(cameras, path):
    write_json(
        {
            "cameras": [
                {
                    "id": c.id,
                    "width": c.width,
                    "height": c.height,
                    "K": c.K.tolist(),
                    "R": c.R.tolist(),
                    "t": c.t.tolist(),
                }
                for c in cameras
            ]
        },
        path,
    )


def read_cameras_json(path) -> list[Camera]:
    data = _read_json(path)
    try:
        return [
            Camera(id=int(c["id"]), K=c["K"], R=c["R"], t=c["t"], width=c["width"], height=c["height"])
            for c in data["cameras"]
        ]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"missing camera field {exc}", location=str(path)) from None
    except ValueError as exc:
        raise FormatError(str(exc), location=str(path)) from None


def qvec_to_rotmat(q) -> np.ndarray:
    """COLMAP (w, x, y, z) quaternion to a rotation matrix, normalising first."""
    w, x, y, z = np.asarray(q, dtype=np.float64)
    if not np.isfinite([w, x, y, z]).all() or np.hypot.reduce([w, x, y, z]) == 0:
        raise InvalidInputError(f"invalid quaternion {list(q)}")
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def rotmat_to_qvec(R) -> np.ndarray:
    x, y, z, w = Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_quat()
    q = np.array([w, x, y, z])
    return -q if q[0] < 0 else q


def _data_lines(path):
    """Yield ``(line_number, stripped_text)`` skipping comments (blank lines kept)."""
    with open(path, "rb") as fh:
        for n, raw in enumerate(fh, start=1):
            try:
                s = raw.decode("utf-8").strip()
            except UnicodeDecodeError:
                raise FormatError("not UTF-8 text", location=f"{path}:{n}") from None
            if s.startswith("#"):
                continue
            yield n, s


def read_colmap_cameras(cameras_txt, images_txt) -> list[Camera]:
    """PINHOLE / SIMPLE_PINHOLE text model; view ids are COLMAP image ids.

    COLMAP puts the top-left pixel centre at (0.5, 0.5); the principal point is
    shifted by -0.5 to the integer-centre convention.
    """
    intrinsics = {}
    for n, s in _data_lines(cameras_txt):
        if not s:
            continue
        el = s.split()
        loc = f"{cameras_txt}:{n}"
        if len(el) < 4:
            raise FormatError("truncated camera line", location=loc)
        model = el[1]
        try:
            cam_id, w, h = int(el[0]), int(el[2]), int(el[3])
            params = [float(v) for v in el[4:]]
        except ValueError as exc:
            raise FormatError(str(exc), location=loc) from None
        if model == "SIMPLE_PINHOLE":
            if len(params) != 3:
                raise FormatError("SIMPLE_PINHOLE expects 3 parameters", location=loc)
            fx = fy = params[0]
            cx, cy = params[1:]
        elif model == "PINHOLE":
            if len(params) != 4:
                raise FormatError("PINHOLE expects 4 parameters", location=loc)
            fx, fy, cx, cy = params
        else:
            raise UnsupportedModelError(f"unsupported camera model {model}", location=loc)
        K = np.array([[fx, 0, cx - 0.5], [0, fy, cy - 0.5], [0, 0, 1.0]])
        intrinsics[cam_id] = (K, w, h)

    cameras = []
    lines = _data_lines(images_txt)
    for n, s in lines:
        if not s:
            continue
        el = s.split()
        loc = f"{images_txt}:{n}"
        if len(el) < 9:
            raise FormatError("truncated image line", location=loc)
        try:
            image_id = int(el[0])
            q = [float(v) for v in el[1:5]]
            t = [float(v) for v in el[5:8]]
            cam_id = int(el[8])
        except ValueError as exc:
            raise FormatError(str(exc), location=loc) from None
        if cam_id not in intrinsics:
            raise FormatError(f"unknown camera id {cam_id}", location=loc)
        next(lines, None)  # the 2-D points line, possibly empty
        K, w, h = intrinsics[cam_id]
        try:
            cameras.append(Camera(id=image_id, K=K, R=qvec_to_rotmat(q), t=t, width=w, height=h))
        except InvalidInputError as exc:
            raise FormatError(str(exc), location=loc) from None
    return cameras


def write_colmap_text(cameras, directory):
    """cameras.txt / images.txt pair (PINHOLE) that :func:`read_colmap_cameras` reads back."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "cameras.txt", "w") as fh:
        fh.write("# CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n")
        for c in cameras:
            K = c.K
            vals = " ".join(repr(float(v)) for v in (K[0, 0], K[1, 1], K[0, 2] + 0.5, K[1, 2] + 0.5))
            fh.write(f"{c.id} PINHOLE {c.width} {c.height} {vals}\n")
    with open(d / "images.txt", "w") as fh:
        fh.write("# IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n# POINTS2D[] as (X, Y, POINT3D_ID)\n")
        for c in cameras:
            q = rotmat_to_qvec(c.R)
            vals = " ".join(repr(float(v)) for v in (*q, *c.t))
            fh.write(f"{c.id} {vals} {c.id} image_{c.id}.png\n\n")


def read_colmap_points3d(path) -> PointCloud:
    pos, col = [], []
    for n, s in _data_lines(path):
        if not s:
            continue
        el = s.split()
        if len(el) < 7:
            raise FormatError("truncated point line", location=f"{path}:{n}")
        try:
            pos.append([float(v) for v in el[1:4]])
            col.append([int(v) for v in el[4:7]])
        except ValueError as exc:
            raise FormatError(str(exc), location=f"{path}:{n}") from None
    if not pos:
        return PointCloud.empty()
    return PointCloud(np.array(pos), np.array(col, dtype=np.uint8), np.full(len(pos), SFM, np.uint8))


def read_cameras(path) -> list[Camera]:
    """Native JSON file, or a directory holding COLMAP ``cameras.txt`` and ``images.txt``."""
    p = Path(path)
    if p.is_dir():
        return read_colmap_cameras(p / "cameras.txt", p / "images.txt")
    return read_cameras_json(p)


# -- depth and images ----------------------------------------------------------

def write_depth_pfm(depth: DepthMap, path, little_endian: bool = True):
    """Single-channel ``Pf`` file; rows are stored bottom-to-top."""
    H, W = depth.values.shape
    order = "<" if little_endian else ">"
    scale = -1.0 if little_endian else 1.0
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{W} {H}\n{scale}\n".encode("ascii"))
        fh.write(np.flipud(depth.values).astype(f"{order}f4").tobytes())


def read_depth_pfm(path, view: int = 0) -> DepthMap:
    with open(path, "rb") as fh:
        data = fh.read()
    header = []
    pos = 0
    # three whitespace-terminated header fields: magic, "W H", scale
    while len(header) < 3:
        end = data.find(b"\n", pos)
        if end < 0:
            raise FormatError("truncated PFM header", location=str(path))
        header.append(data[pos:end].decode("ascii", "replace").strip())
        pos = end + 1
    magic, dims, scale = header
    if magic != "Pf":
        raise FormatError(f"expected single-channel 'Pf' magic, got {magic!r}", location=str(path))
    m = re.fullmatch(r"(\d+)\s+(\d+)", dims)
    if not m:
        raise FormatError(f"bad PFM dimensions {dims!r}", location=str(path))
    W, H = int(m.group(1)), int(m.group(2))
    try:
        s = float(scale)
    except ValueError:
        raise FormatError(f"bad PFM scale {scale!r}", location=str(path)) from None
    if W < 1 or H < 1 or s == 0:
        raise FormatError("PFM dimensions and scale must be non-zero", location=str(path))
    if len(data) - pos != 4 * W * H:
        raise FormatError(f"expected {4 * W * H} data bytes, found {len(data) - pos}", location=str(path))
    arr = np.frombuffer(data, dtype="<f4" if s < 0 else ">f4", offset=pos).reshape(H, W)
    return DepthMap(view, np.flipud(arr).astype(np.float64))


def write_depth_raw(depth: DepthMap, path):
    """Headerless little-endian f32, row-major, top row first."""
    Path(path).write_bytes(depth.values.astype("<f4").tobytes())


def read_depth_raw(path, width: int, height: int, view: int = 0) -> DepthMap:
    data = Path(path).read_bytes()
    if len(data) != 4 * width * height:
        raise FormatError(f"expected {4 * width * height} bytes for {width}x{height}, found {len(data)}",
                          location=str(path))
    return DepthMap(view, np.frombuffer(data, dtype="<f4").reshape(height, width).astype(np.float64))


def read_depth(path, camera: Camera) -> DepthMap:
    p = Path(path)
    if p.suffix.lower() == ".pfm":
        return read_depth_pfm(p, view=camera.id)
    return read_depth_raw(p, camera.width, camera.height, view=camera.id)


def write_image(image, path):
    from PIL import Image

    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(path)


def read_image(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


# -- matches -------------------------------------------------------------------

def write_matches(matches, path):
    with open(path, "w") as fh:
        fh.write("# view_a view_b xa ya xb yb conf\n")
        for m in matches:
            fh.write(
                f"{m.view_a} {m.view_b} {float(m.pixel_a[0])!r} {float(m.pixel_a[1])!r} "
                f"{float(m.pixel_b[0])!r} {float(m.pixel_b[1])!r} {float(m.confidence)!r}\n"
            )


def read_matches(path, cameras=None):
    """Parse ``view_a view_b xa ya xb yb [conf]`` lines.

    With ``cameras`` (mapping id -> Camera, or a list) out-of-bounds matches
    are dropped. Returns ``(matches, n_rejected)``.
    """
    if cameras is not None and not isinstance(cameras, dict):
        cameras = {c.id: c for c in cameras}
    matches, rejected = [], 0
    for n, s in _data_lines(path):
        if not s:
            continue
        loc = f"{path}:{n}"
        el = s.split()
        if len(el) not in (6, 7):
            raise FormatError(f"expected 6 or 7 fields, got {len(el)}", location=loc)
        try:
            va, vb = int(el[0]), int(el[1])
            xa, ya, xb, yb = (float(v) for v in el[2:6])
            conf = float(el[6]) if len(el) == 7 else 1.0
        except ValueError as exc:
            raise FormatError(str(exc), location=loc) from None
        if va == vb:
            raise FormatError("match connects a view to itself", location=loc)
        if not 0 <= conf <= 1:
            raise FormatError(f"confidence {conf} outside [0, 1]", location=loc)
        if cameras is not None:
            if va not in cameras or vb not in cameras:
                raise FormatError(f"unknown view in match ({va}, {vb})", location=loc)
            if not (cameras[va].contains((xa, ya)) and cameras[vb].contains((xb, yb))):
                rejected += 1
                continue
        matches.append(PairwiseMatch(va, vb, (xa, ya), (xb, yb), conf))
    if rejected:
        log.warning("%s: rejected %d out-of-bounds matches", path, rejected)
    return matches, rejected


# -- point clouds --------------------------------------------------------------

PLY_VERTEX = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")])


def ply_header(n: int) -> bytes:
    return (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "end_header\n"
    ).encode("ascii")


def write_ply(cloud: PointCloud, path):
    v = np.empty(len(cloud), dtype=PLY_VERTEX)
    for k, name in enumerate("xyz"):
        v[name] = cloud.positions[:, k]
    for k, name in enumerate(("red", "green", "blue")):
        v[name] = cloud.colors[:, k]
    with open(path, "wb") as fh:
        fh.write(ply_header(len(cloud)))
        fh.write(v.tobytes())


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def read_ply(path, tag: int = SFM) -> PointCloud:
    """Vertex positions and (optional) colours from an ascii or binary PLY."""
    data = Path(path).read_bytes()
    try:
        return _parse_ply(data, path, tag)
    except (ValueError, IndexError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed PLY: {exc}", location=str(path)) from None


def _parse_ply(data, path, tag):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError("not a PLY file", location=str(path))
    body = data.index(b"\n", end) + 1
    lines = data[:end].decode("ascii", "replace").splitlines()
    fmt, n_vertex, props, in_vertex, before = None, None, [], False, 0
    for ln, line in enumerate(lines, start=1):
        el = line.split()
        if not el:
            continue
        if el[0] == "format":
            fmt = el[1]
        elif el[0] == "element":
            in_vertex = el[1] == "vertex"
            if in_vertex:
                n_vertex = int(el[2])
            elif n_vertex is None:
                before += 1
        elif el[0] == "property" and in_vertex:
            if el[1] == "list":
                raise FormatError("list properties on vertices are not supported", location=f"{path}:{ln}")
            if el[1] not in _PLY_TYPES:
                raise FormatError(f"unknown property type {el[1]}", location=f"{path}:{ln}")
            props.append((el[2], _PLY_TYPES[el[1]]))
    if n_vertex is None or before:
        raise FormatError("vertex element must come first", location=str(path))
    names = [p[0] for p in props]
    if fmt == "ascii":
        rows = data[body:].decode("ascii").split("\n")[:n_vertex]
        table = np.array([[float(v) for v in r.split()[: len(props)]] for r in rows]).reshape(-1, len(props))
        cols = {name: table[:, k] for k, name in enumerate(names)}
    elif fmt in ("binary_little_endian", "binary_big_endian"):
        order = "<" if fmt == "binary_little_endian" else ">"
        dt = np.dtype([(name, order + t) for name, t in props])
        if len(data) - body < dt.itemsize * n_vertex:
            raise FormatError("truncated vertex data", location=str(path))
        arr = np.frombuffer(data, dtype=dt, count=n_vertex, offset=body)
        cols = {name: arr[name] for name in names}
    else:
        raise FormatError(f"unsupported PLY format {fmt}", location=str(path))
    try:
        pos = np.stack([cols["x"], cols["y"], cols["z"]], axis=1).astype(np.float64)
    except KeyError:
        raise FormatError("PLY vertices lack x/y/z", location=str(path)) from None
    if all(c in cols for c in ("red", "green", "blue")):
        rgb = np.stack([cols["red"], cols["green"], cols["blue"]], axis=1).astype(np.uint8)
    else:
        rgb = np.full((n_vertex, 3), 128, np.uint8)
    return PointCloud(pos, rgb, np.full(n_vertex, tag, np.uint8))


def read_sfm_cloud(path) -> PointCloud:
    p = Path(path)
    if p.suffix.lower() == ".txt":
        return read_colmap_points3d(p)
    return read_ply(p, tag=SFM)


# -- stage artifacts -----------------------------------------------------------

def _track_to_json(t: Track):
    return {
        "observations": [[v, list(p)] for v, p in sorted(t.observations.items())],
        "query_views": sorted(t.query_views),
    }


def _track_from_json(d) -> Track:
    obs = {int(v): (float(p[0]), float(p[1])) for v, p in d["observations"]}
    a = min(obs)
    return Track(observations=obs, anchor=(a, obs[a]), query_views=frozenset(int(v) for v in d["query_views"]))


def write_tracks(tracks, path):
    write_json({"tracks": [_track_to_json(t) for t in tracks]}, path)


def read_tracks(path) -> list[Track]:
    if not Path(path).exists():
        raise MissingArtifactError(f"missing tracks artifact {path}; run the 'tracks' stage first")
    try:
        return [_track_from_json(d) for d in _read_json(path)["tracks"]]
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise FormatError(f"malformed tracks artifact: {exc!r}", location=str(path)) from None


def write_controls(controls, path, extra=None):
    payload = {
        "controls": [
            {
                "position": [float(v) for v in c.position],
                "reproj_error": c.reproj_error,
                "track_index": c.track_index,
                "track": _track_to_json(c.track),
            }
            for c in controls
        ]
    }
    if extra:
        payload.update(extra)
    write_json(payload, path)


def read_controls(path):
    """Control points plus any extra top-level fields stored with them."""
    if not Path(path).exists():
        raise MissingArtifactError(f"missing controls artifact {path}; run the 'triangulate' stage first")
    data = _read_json(path)
    controls = []
    try:
        for d in data.pop("controls"):
            track = _track_from_json(d["track"])
            controls.append(
                ControlPoint(
                    position=np.array(d["position"], dtype=np.float64).reshape(3),
                    track=track,
                    reproj_error=float(d["reproj_error"]),
                    n_views=len(track),
                    track_index=int(d["track_index"]),
                )
            )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise FormatError(f"malformed controls artifact: {exc!r}", location=str(path)) from None
    return controls, data


# -- job manifest --------------------------------------------------------------

MANIFEST_KEYS = (
    "cameras", "depths", "images", "matches", "sfm", "output", "workdir",
    "radius_fraction", "margin", "cluster_radius", "max_points", "max_reproj_px",
    "k", "lambda", "seed", "quantization",
)


@dataclass
class JobManifest:
    """Paths are resolved against the manifest's directory."""

    cameras: Path
    depths: dict
    matches: Path
    output: Path
    workdir: Path
    images: dict = field(default_factory=dict)
    sfm: Path | None = None
    radius_fraction: float | None = None
    margin: float = 0.05
    cluster_radius: float = 0.01
    max_points: int = 30_000
    max_reproj_px: float = 2.0
    k: int | None = None
    lam: float = 0.0
    seed: int = 0
    quantization: float = 1.0


def load_manifest(path, check_files: bool = True, **overrides) -> JobManifest:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"manifest not found: {path}")
    raw = _read_json(path)
    unknown = set(raw) - set(MANIFEST_KEYS)
    if unknown:
        raise FormatError(f"unknown manifest keys {sorted(unknown)}", location=str(path))
    raw.update({k: v for k, v in overrides.items() if v is not None})
    base = path.parent

    def resolve(p):
        return None if p is None else (base / p)

    for key in ("cameras", "depths", "matches"):
        if key not in raw:
            raise FormatError(f"manifest lacks required key {key!r}", location=str(path))
    try:
        m = _manifest_from(raw, resolve)
    except (TypeError, ValueError, AttributeError) as exc:
        raise FormatError(f"bad manifest value: {exc}", location=str(path)) from None
    if check_files:
        needed = [m.cameras, m.matches, *m.depths.values(), *m.images.values()]
        if m.sfm is not None:
            needed.append(m.sfm)
        for p in needed:
            if not p.exists():
                raise MissingArtifactError(f"manifest references missing file: {p}")
    return m


def _manifest_from(raw, resolve) -> JobManifest:
    return JobManifest(
        cameras=resolve(raw["cameras"]),
        depths={int(k): resolve(v) for k, v in raw["depths"].items()},
        images={int(k): resolve(v) for k, v in raw.get("images", {}).items()},
        matches=resolve(raw["matches"]),
        sfm=resolve(raw.get("sfm")),
        output=resolve(raw.get("output", "init.ply")),
        workdir=resolve(raw.get("workdir", "work")),
        radius_fraction=raw.get("radius_fraction"),
        margin=float(raw.get("margin", 0.05)),
        cluster_radius=float(raw.get("cluster_radius", 0.01)),
        max_points=int(raw.get("max_points", 30_000)),
        max_reproj_px=float(raw.get("max_reproj_px", 2.0)),
        k=raw.get("k"),
        lam=float(raw.get("lambda", 0.0)),
        seed=int(raw.get("seed", 0)),
        quantization=float(raw.get("quantization", 1.0)),
    )


def load_inputs(manifest: JobManifest):
    """Read cameras, depths, images, matches and the SfM cloud named by a manifest."""
    from .pipeline import SceneContext

    cameras = read_cameras(manifest.cameras)
    cam_map = {c.id: c for c in cameras}
    if set(manifest.depths) != set(cam_map):
        raise InvalidInputError(
            f"depth views {sorted(manifest.depths)} do not match camera views {sorted(cam_map)}"
        )
    depths = {v: read_depth(p, cam_map[v]) for v, p in manifest.depths.items()}
    images = {v: read_image(p) for v, p in manifest.images.items()}
    matches, _ = read_matches(manifest.matches, cam_map)
    sfm = read_sfm_cloud(manifest.sfm) if manifest.sfm is not None else PointCloud.empty()
    return SceneContext(cameras=cameras, depths=depths, images=images, matches=matches, sfm=sfm)

