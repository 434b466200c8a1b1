"""Multi-view score (share of tracks seen in three or more views) for synthetic scenes.

Compares the default key-view count against alternatives for several view counts.

    python3 scripts/multiview_scores.py
"""

import argparse

import numpy as np

from splatinit.pipeline import PipelineConfig, SceneContext, stage_tracks
from splatinit.synth import SceneSpec, generate_scene
from splatinit.tracks import default_k, multiview_score, track_lengths


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--views", type=int, nargs="+", default=[3, 6, 9])
    ap.add_argument("--kind", default="sphere", choices=("plane", "sphere", "heightfield"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'views':>5} {'k':>3} {'tracks':>7} {'score':>7}  track-length histogram")
    for n in args.views:
        for k in sorted({1, 2, default_k(n), min(n - 1, 6)}):
            scene = generate_scene(SceneSpec(kind=args.kind, n_views=n, width=160, height=120,
                                             match_fraction=0.02, seed=args.seed, k=k))
            tracks = stage_tracks(SceneContext.from_scene(scene), PipelineConfig(k=k))
            lengths, counts = np.unique(track_lengths(tracks), return_counts=True)
            hist = dict(zip(lengths.tolist(), counts.tolist()))
            mark = "*" if k == default_k(n) else " "
            print(f"{n:>5} {k:>2}{mark} {len(tracks):>7} {multiview_score(tracks):>7.3f}  {hist}")
    print("* marks the default key-view count")


if __name__ == "__main__":
    main()
