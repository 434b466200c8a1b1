"""Command line entry point.

Subcommands: init (full run), tracks, triangulate, tps, cbps (single
stages that read and write artifacts in the work directory), synth and score.
Exit codes: 0 ok, 2 input/format error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io
from .errors import MissingArtifactError, SplatInitError
from .geometry import scene_scale
from .pipeline import (
    PipelineConfig,
    StageTimer,
    estimated_pointmaps,
    run_pipeline,
    stage_cbps,
    stage_tps,
    stage_tracks,
    stage_triangulate,
)
from .tps import dump_model, load_model
from .tracks import multiview_score

log = logging.getLogger("splatinit")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

TRACKS_FILE = "tracks.json"
CONTROLS_FILE = "controls.json"
TPS_INDEX = "tps_index.json"


class StageFailure(Exception):
    def __init__(self, stage, cause):
        self.stage, self.cause = stage, cause
        super().__init__(f"stage '{stage}' failed: {cause}")


def _manifest_overrides(args):
    keys = ("radius_fraction", "margin", "cluster_radius", "max_points", "max_reproj_px",
            "k", "lambda", "seed", "quantization", "output", "workdir")
    out = {}
    for key in keys:
        val = getattr(args, key.replace("lambda", "lam"), None)
        if val is not None:
            out[key] = str(Path(val).resolve()) if key in ("output", "workdir") else val
    return out


def _load(args):
    try:
        manifest = io.load_manifest(args.manifest, **_manifest_overrides(args))
    except SplatInitError as exc:
        raise StageFailure("io", exc) from exc
    return manifest, PipelineConfig.from_manifest(manifest)


def _inputs(manifest, timer):
    with timer("io"):
        try:
            return io.load_inputs(manifest)
        except (SplatInitError, OSError) as exc:
            raise StageFailure("io", exc) from exc


def _print_summary(summary, timer):
    print(timer.table())
    for key, val in summary.items():
        print(f"{key}: {val}")


def run_init(args) -> int:
    manifest, cfg = _load(args)
    timer = StageTimer()
    ctx = _inputs(manifest, timer)
    try:
        result = run_pipeline(ctx, cfg, timer)
    except SplatInitError as exc:
        raise StageFailure(_failed_stage(timer), exc) from exc
    with timer("io"):
        manifest.output.parent.mkdir(parents=True, exist_ok=True)
        io.write_ply(result.cloud, manifest.output)
    _print_summary(result.summary, timer)
    print(f"wrote {len(result.cloud)} points to {manifest.output}")
    return EXIT_OK


def _failed_stage(timer):
    return timer.failed or "cbps"


def run_stage(stage, args) -> int:
    manifest, cfg = _load(args)
    timer = StageTimer()
    work = manifest.workdir
    work.mkdir(parents=True, exist_ok=True)
    # upstream artifacts are checked before any input is read
    needs = {"triangulate": [TRACKS_FILE], "tps": [CONTROLS_FILE], "cbps": [CONTROLS_FILE, TPS_INDEX]}
    for name in needs.get(stage, []):
        if not (work / name).exists():
            raise StageFailure(stage, MissingArtifactError(f"missing upstream artifact {work / name}"))
    ctx = _inputs(manifest, timer)
    try:
        if stage == "tracks":
            with timer("correspondences"):
                tracks = stage_tracks(ctx, cfg)
            with timer("io"):
                io.write_tracks(tracks, work / TRACKS_FILE)
            summary = {"tracks": len(tracks), "multiview_score": multiview_score(tracks)}
        elif stage == "triangulate":
            with timer("io"):
                tracks = io.read_tracks(work / TRACKS_FILE)
            with timer("triangulation"):
                controls, rejected = stage_triangulate(ctx, cfg, tracks)
            with timer("io"):
                io.write_controls(controls, work / CONTROLS_FILE, {"rejected": dict(rejected)})
            summary = {"tracks": len(tracks), "controls_accepted": len(controls),
                       "controls_rejected": sum(rejected.values())}
        elif stage == "tps":
            with timer("io"):
                controls, _ = io.read_controls(work / CONTROLS_FILE)
            with timer("tps"):
                models, n_pairs = stage_tps(ctx, cfg, controls)
            with timer("io"):
                for v, model in models.items():
                    dump_model(model, work / f"tps_view{v}.tps3")
                io.write_json({"views": sorted(models), "pairs_per_view": {str(k): n for k, n in n_pairs.items()}},
                              work / TPS_INDEX)
            summary = {"pairs_per_view": n_pairs, "views_skipped": sorted(set(ctx.view_ids) - set(models))}
        elif stage == "cbps":
            with timer("io"):
                controls, _ = io.read_controls(work / CONTROLS_FILE)
                index = json.loads((work / TPS_INDEX).read_text())
                models = {}
                for v in index["views"]:
                    path = work / f"tps_view{v}.tps3"
                    if not path.exists():
                        raise MissingArtifactError(f"missing upstream artifact {path}")
                    models[int(v)] = load_model(path)
            with timer("cbps"):
                cloud, summary = stage_cbps(ctx, cfg, controls, models, estimated_pointmaps(ctx))
            with timer("io"):
                manifest.output.parent.mkdir(parents=True, exist_ok=True)
                io.write_ply(cloud, manifest.output)
                io.write_json(summary, work / "cbps_summary.json")
        else:
            raise ValueError(stage)
    except SplatInitError as exc:
        raise StageFailure(stage, exc) from exc
    _print_summary(summary, timer)
    return EXIT_OK


def run_synth(args) -> int:
    from .synth import SceneSpec, generate_scene, write_scene

    spec = SceneSpec(kind=args.kind, n_views=args.views, width=args.width, height=args.height,
                     corruption=args.corruption, seed=args.seed, match_fraction=args.match_fraction)
    try:
        scene = generate_scene(spec)
    except SplatInitError as exc:
        raise StageFailure("synth", exc) from exc
    path = write_scene(scene, args.outdir)
    print(f"scene with {len(scene.matches)} matches written; manifest: {path}")
    print(f"scene scale S = {scene_scale(scene.cameras).S:.6g}")
    return EXIT_OK


def run_score(args) -> int:
    if args.tracks:
        tracks = io.read_tracks(args.tracks)
    else:
        manifest, cfg = _load(args)
        ctx = _inputs(manifest, StageTimer())
        tracks = stage_tracks(ctx, cfg)
    print(f"tracks: {len(tracks)}")
    print(f"multiview_score: {multiview_score(tracks):.6f}")
    return EXIT_OK


def _add_overrides(p):
    p.add_argument("manifest", help="job manifest (JSON)")
    p.add_argument("--output", help="output PLY path")
    p.add_argument("--workdir", help="directory for intermediate stage artifacts")
    p.add_argument("--radius-fraction", type=float, help="CBPS radius as a fraction of the scene scale")
    p.add_argument("--margin", type=float, help="drop sampled points this close to an SfM point")
    p.add_argument("--cluster-radius", type=float, help="greedy thinning radius")
    p.add_argument("--max-points", type=int, help="cap on calibrated points after thinning")
    p.add_argument("--max-reproj-px", type=float, help="mean reprojection error threshold")
    p.add_argument("-k", type=int, help="key views per query view")
    p.add_argument("--lambda", dest="lam", type=float, help="TPS regularisation")
    p.add_argument("--seed", type=int)
    p.add_argument("--quantization", type=float, help="pixel cell size for track chaining")


def build_parser():
    parser = argparse.ArgumentParser(prog="splatinit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("init", "run the full pipeline and write the initialization PLY"),
        ("tracks", "build multi-view tracks from the match file"),
        ("triangulate", "triangulate tracks into control points"),
        ("tps", "fit one thin-plate-spline warp per view"),
        ("cbps", "deform, sample, merge, thin and export"),
    ):
        _add_overrides(sub.add_parser(name, help=help_))
    s = sub.add_parser("synth", help="generate a synthetic scene with a job manifest")
    s.add_argument("outdir")
    s.add_argument("--kind", choices=("plane", "sphere", "heightfield"), default="sphere")
    s.add_argument("--views", type=int, default=3)
    s.add_argument("--width", type=int, default=400)
    s.add_argument("--height", type=int, default=300)
    s.add_argument("--corruption", type=float, default=0.1)
    s.add_argument("--match-fraction", type=float, default=0.005)
    s.add_argument("--seed", type=int, default=0)
    sc = sub.add_parser("score", help="multi-view score of the tracks")
    sc.add_argument("manifest", nargs="?")
    sc.add_argument("--tracks", help="score an existing tracks.json instead")
    sc.add_argument("-k", type=int)
    sc.add_argument("--quantization", type=float)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "init":
            return run_init(args)
        if args.command == "synth":
            return run_synth(args)
        if args.command == "score":
            if not (args.manifest or args.tracks):
                print("error: score needs a manifest or --tracks", file=sys.stderr)
                return EXIT_INPUT
            return run_score(args)
        return run_stage(args.command, args)
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        cause = exc.cause
        if isinstance(cause, SplatInitError):
            return cause.exit_code
        return EXIT_IO if isinstance(cause, OSError) else EXIT_INPUT
    except SplatInitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
