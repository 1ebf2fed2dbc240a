"""Command-line entry point: ``mvstream <subcommand> ...``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import codec
from .codec import BitstreamError, FrameType, RawVideo, decode
from .metrics import RunReport, format_cdf, savings_summary, similar_patch_cdf
from .motion import MotionAnalyzer, PatchGridSpec, format_mask_line
from .pipeline import MODES, PipelineConfig, PipelineError, read_config_file, run_pipeline
from .scenarios import KINDS, ScenarioSpec, generate_scenario


def _pair(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected 'x,y', got {text!r}")
    return int(parts[0]), int(parts[1])


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _load_video(path: str) -> RawVideo:
    data = Path(path).read_bytes()
    if data[:4] == codec.BITSTREAM_MAGIC:
        return codec.decode_video(data)
    return RawVideo.from_bytes(data)


# pipeline flags map 1:1 onto PipelineConfig fields; None means "not given"
_PIPELINE_FLAGS = [
    ("--window-frames", int), ("--stride-frames", int), ("--target-fps", float),
    ("--tau", float), ("--alpha", float), ("--gop", int), ("--block-size", int),
    ("--search-radius", int), ("--patch-size", int), ("--group-size", int),
    ("--embed-dim", int), ("--token-dim", int), ("--layers", int), ("--heads", int),
    ("--model-dim", int), ("--rope-base", float), ("--prompt-tokens", int), ("--seed", int),
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvstream", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic RawVideo file")
    p.add_argument("--kind", choices=KINDS, default="translating_object")
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--frames", type=int, default=32)
    p.add_argument("--fps", type=int, default=2)
    p.add_argument("--velocity", type=_pair, default=(1, 0), help="px/frame as vx,vy")
    p.add_argument("--object-size", type=int, default=16)
    p.add_argument("--objects", type=int, default=3)
    p.add_argument("--cut-frame", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("encode", help="encode a RawVideo file into a bitstream")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--gop", type=int, default=16)
    p.add_argument("--block-size", type=int, default=8)
    p.add_argument("--search-radius", type=int, default=4)

    p = sub.add_parser("inspect", help="dump per-frame codec metadata")
    p.add_argument("input")
    p.add_argument("--mvs", action="store_true", help="print every motion vector")
    p.add_argument("--masks", action="store_true", help="print accumulated patch masks")
    p.add_argument("--tau", type=float, default=0.25)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--patch-size", type=int, default=8)
    p.add_argument("--group-size", type=int, default=2)

    p = sub.add_parser("cdf", help="similar-patch ratio CDF over videos")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--thresholds", type=_floats, default=[0.25, 0.5, 1.0, 2.0])
    p.add_argument("--gop", type=int, default=16)
    p.add_argument("--block-size", type=int, default=8)
    p.add_argument("--search-radius", type=int, default=4)
    p.add_argument("--patch-size", type=int, default=8)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("-o", "--output")

    p = sub.add_parser("run", help="run the streaming pipeline and write a report")
    p.add_argument("input", help="RawVideo or bitstream file")
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--refresh-mode", choices=("full", "naive_reuse", "selective"))
    p.add_argument("--stride-pct", type=float, help="stride as a percentage of the window")
    p.add_argument("--cross-attention", action="store_true", default=None)
    p.add_argument("--allow-partial", action="store_true", default=None)
    for flag, typ in _PIPELINE_FLAGS:
        p.add_argument(flag, type=typ)
    p.add_argument("-o", "--output", help="report path (default: stdout)")
    p.add_argument("--table", help="write the per-window CSV table here")
    p.add_argument("--masks", help="write the per-frame mask dump here")

    p = sub.add_parser("compare", help="savings of an optimized report vs a full one")
    p.add_argument("full")
    p.add_argument("optimized")
    return parser


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_gen(args) -> int:
    spec = ScenarioSpec(
        kind=args.kind, width=args.width, height=args.height, length=args.frames, fps=args.fps,
        velocity=args.velocity, object_size=args.object_size, n_objects=args.objects,
        cut_frame=args.cut_frame, seed=args.seed,
    )
    generate_scenario(spec).video.save(args.output)
    return 0


def cmd_encode(args) -> int:
    video = RawVideo.load(args.input)
    bs = codec.encode(video, args.gop, args.block_size, args.search_radius)
    bs.save(args.output)
    print(
        f"frames={len(video)} raw_bytes={Path(args.input).stat().st_size} "
        f"bitstream_bytes={Path(args.output).stat().st_size}"
    )
    return 0


def cmd_inspect(args) -> int:
    data = Path(args.input).read_bytes()
    header = codec.read_header(data)
    print(" ".join(f"{k}={v}" for k, v in header.items()))
    analyzer = None
    if args.masks:
        spec = PatchGridSpec.for_frame(header["height"], header["width"], args.patch_size, args.group_size)
        analyzer = MotionAnalyzer(spec, args.tau, args.alpha)
    for frame in decode(data):
        if frame.frame_type is FrameType.I:
            print(f"frame={frame.index} type=I gop={frame.gop_index}")
        else:
            mags = frame.motion.magnitudes()
            print(
                f"frame={frame.index} type=P gop={frame.gop_index} "
                f"blocks={mags.size} moving_blocks={int((mags > 0).sum())} "
                f"max_mv={mags.max():.3f} sad_total={int(frame.motion.sad.sum())}"
            )
            if args.mvs:
                for (r, c), (dx, dy) in zip(
                    ((r, c) for r in range(mags.shape[0]) for c in range(mags.shape[1])),
                    frame.motion.vectors.reshape(-1, 2),
                ):
                    print(f"  mv block=({r},{c}) dx={dx} dy={dy} sad={frame.motion.sad[r, c]}")
        if analyzer is not None:
            mask = analyzer.update(frame.frame_type, frame.motion, frame.residual)
            print("mask " + format_mask_line(frame.index, mask))
    return 0


def cmd_cdf(args) -> int:
    videos = [_load_video(p) for p in args.inputs]
    rows = similar_patch_cdf(
        videos, args.thresholds, gop_size=args.gop, block_size=args.block_size,
        search_radius=args.search_radius, patch_size=args.patch_size, alpha=args.alpha,
    )
    _emit(format_cdf(rows), args.output)
    return 0


def config_from_args(args) -> PipelineConfig:
    values: dict[str, object] = {}
    if args.config:
        values.update(read_config_file(args.config))
    for flag, _ in _PIPELINE_FLAGS:
        v = getattr(args, flag[2:].replace("-", "_"))
        if v is not None:
            values[flag[2:]] = v
    for name in ("mode", "refresh_mode", "cross_attention", "allow_partial"):
        v = getattr(args, name)
        if v is not None:
            values[name] = v
    window = values.get("window-frames", values.get("window_frames"))
    if args.stride_pct is not None:
        w = int(window) if window is not None else PipelineConfig.window_frames
        values["stride_frames"] = max(1, round(w * args.stride_pct / 100.0))
    return PipelineConfig.from_mapping(values)


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    data = Path(args.input).read_bytes()
    source = RawVideo.from_bytes(data) if data[:4] == codec.RAW_MAGIC else data
    result = run_pipeline(source, cfg, keep_hidden=False)
    _emit(result.report.to_text(), args.output)
    if args.table:
        Path(args.table).write_text(result.report.to_csv())
    if args.masks:
        Path(args.masks).write_text("\n".join(result.mask_lines) + "\n")
    return 0


def cmd_compare(args) -> int:
    full = RunReport.from_text(Path(args.full).read_text())
    opt = RunReport.from_text(Path(args.optimized).read_text())
    sys.stdout.write(savings_summary(full, opt).to_text())
    return 0


COMMANDS = {
    "gen": cmd_gen, "encode": cmd_encode, "inspect": cmd_inspect,
    "cdf": cmd_cdf, "run": cmd_run, "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except BitstreamError as exc:
        print(f"error: malformed input: {exc}", file=sys.stderr)
        return 1
    except (PipelineError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
