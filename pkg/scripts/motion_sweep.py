"""Token pruning and FLOP savings as object speed grows.

    python3 scripts/motion_sweep.py --velocities 0,1,2,4,8 --tau 0.25
"""

import argparse

from mvstream.metrics import savings_summary
from mvstream.pipeline import PipelineConfig, run_pipeline
from mvstream.scenarios import motion_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--velocities", default="0,1,4")
    ap.add_argument("--tau", type=float, default=0.25)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--frames", type=int, default=64)
    ap.add_argument("--window", type=int, default=16)
    ap.add_argument("--stride", type=int, default=4)
    ap.add_argument("--gop", type=int, default=16)
    args = ap.parse_args()

    velocities = [int(v) for v in args.velocities.split(",")]
    base = dict(window_frames=args.window, stride_frames=args.stride, gop_size=args.gop, tau=args.tau)
    print("velocity,token_pruning,flop_reduction,byte_ratio,drift_mean")
    for sc in motion_sweep(velocities, width=args.size, height=args.size, length=args.frames):
        full = run_pipeline(sc.video, PipelineConfig(**base, mode="full"), keep_hidden=False).report
        opt = run_pipeline(sc.video, PipelineConfig(**base, mode="full_opt"), keep_hidden=False).report
        s = savings_summary(full, opt)
        print(f"{sc.spec.velocity[0]},{s.token_reduction:.4f},{s.flop_reduction:.4f},"
              f"{s.byte_ratio:.4f},{opt.drift_mean:.4e}")


if __name__ == "__main__":
    main()
