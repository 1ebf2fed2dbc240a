"""Hidden-state drift of the refresh policies over a corpus of sliding-window pairs.

Each scenario is a translating object long enough for exactly two windows
(w=12, s=4, GOP 4 by default), so every run contributes one refresh.
"""

import argparse

import numpy as np

from mvstream.pipeline import PipelineConfig, run_pipeline
from mvstream.scenarios import ScenarioSpec, generate_scenario

POLICIES = ("full", "selective", "naive_reuse")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pairs", type=int, default=20)
    ap.add_argument("--window", type=int, default=12)
    ap.add_argument("--stride", type=int, default=4)
    ap.add_argument("--gop", type=int, default=4)
    ap.add_argument("--tau", type=float, default=0.0, help="0 keeps every token (kvc_only)")
    args = ap.parse_args()

    mode = "kvc_only" if args.tau == 0 else "full_opt"
    rows = {p: [] for p in POLICIES}
    recomputed = {p: [] for p in POLICIES}
    for seed in range(args.pairs):
        spec = ScenarioSpec(width=32, height=32, length=args.window + args.stride, object_size=8,
                            velocity=(1 + seed % 4, seed % 3 - 1), seed=seed)
        video = generate_scenario(spec).video
        for policy in POLICIES:
            cfg = PipelineConfig(window_frames=args.window, stride_frames=args.stride, gop_size=args.gop,
                                 tau=args.tau, mode=mode, refresh_mode=policy, seed=seed)
            ws = run_pipeline(video, cfg, keep_hidden=False).report.per_window[1]
            rows[policy].append(ws.drift_mean)
            recomputed[policy].append(ws.recomputed_positions / ws.positions)

    print("policy,drift_mean,drift_p90,recompute_fraction")
    for p in POLICIES:
        d = np.array(rows[p])
        print(f"{p},{d.mean():.4e},{np.percentile(d, 90):.4e},{np.mean(recomputed[p]):.3f}")
    wins = sum(s <= n for s, n in zip(rows["selective"], rows["naive_reuse"]))
    print(f"# selective <= naive on {wins}/{args.pairs} pairs")


if __name__ == "__main__":
    main()
