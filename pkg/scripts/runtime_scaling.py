"""Pipeline wall time per stage as the number of views grows, at a fixed control density per view.

    python3 scripts/runtime_scaling.py --views 3 6 9 12
"""

import argparse

from splatinit.pipeline import STAGES, PipelineConfig, SceneContext, StageTimer, run_pipeline
from splatinit.synth import SceneSpec, generate_scene


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--views", type=int, nargs="+", default=[3, 6, 9, 12])
    ap.add_argument("--width", type=int, default=400)
    ap.add_argument("--height", type=int, default=300)
    ap.add_argument("--match-fraction", type=float, default=0.0058)
    ap.add_argument("--seed", type=int, default=8)
    args = ap.parse_args()

    header = f"{'views':>5} {'controls':>8} " + " ".join(f"{s[:8]:>9}" for s in STAGES) + f" {'total':>8} {'s/view':>7}"
    print(header)
    base = None
    for n in args.views:
        # keep the angular spacing between neighbouring views roughly constant
        spec = SceneSpec(kind="sphere", n_views=n, width=args.width, height=args.height, corruption=0.1,
                         seed=args.seed, match_fraction=args.match_fraction, arc_degrees=20.0 * (n - 1) + 20)
        scene = generate_scene(spec)
        timer = StageTimer()
        result = run_pipeline(SceneContext.from_scene(scene), PipelineConfig(), timer)
        per_view = timer.total / n
        base = base or per_view
        print(f"{n:>5} {result.summary['controls_accepted']:>8} "
              + " ".join(f"{timer.seconds[s]:>9.3f}" for s in STAGES)
              + f" {timer.total:>8.3f} {per_view:>7.3f}")
    print("linear scaling means the s/view column stays roughly flat")


if __name__ == "__main__":
    main()
