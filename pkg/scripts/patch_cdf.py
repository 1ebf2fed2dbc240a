"""Distribution of the per-frame fraction of near-static patches across scenario kinds."""

import argparse

from mvstream.metrics import format_cdf, similar_patch_cdf
from mvstream.scenarios import ScenarioSpec, generate_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kinds", default="translating_object,multi_object,static")
    ap.add_argument("--thresholds", default="0.25,0.5,1,2")
    ap.add_argument("--videos", type=int, default=4, help="seeds per kind")
    ap.add_argument("--frames", type=int, default=32)
    args = ap.parse_args()

    thresholds = [float(t) for t in args.thresholds.split(",")]
    for kind in args.kinds.split(","):
        videos = [
            generate_scenario(ScenarioSpec(kind=kind, length=args.frames, velocity=(2, 1), seed=s)).video
            for s in range(args.videos)
        ]
        print(f"# {kind}")
        print(format_cdf(similar_patch_cdf(videos, thresholds)), end="")


if __name__ == "__main__":
    main()
