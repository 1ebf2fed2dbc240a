"""Token, FLOP, byte and drift accounting plus the similar-patch CDF analysis.

Cost model (FLOPs = 2 x multiply-adds)::

    vit      = 2 * (patches * (p^2*d_v + d_v^2) + groups * g^2*d_v*d_t)
    prefill  = 2 * (r*d_t*d + L * (r*(4*d^2 + 2*d*f) + r*n*2*d))
    rope     = 3 * L * d * reused

with r recomputed positions out of n, f the MLP width. Attention is charged
for every (recomputed query, key) pair of the assembled sequence.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .codec import FrameType, RawVideo, decode, encode
from .encoder import EncoderConfig
from .kvcache import LlmConfig
from .motion import PatchGridSpec, build_motion_mask, resample_to_patches

COST_MODEL = (
    "flops_vit=2*(patches*(p^2*d_v+d_v^2)+groups*g^2*d_v*d_t); "
    "flops_prefill=2*(r*d_t*d+L*(r*(4*d^2+2*d*f)+r*n*2*d)); "
    "flops_rope=3*L*d*reused"
)


def flops_vit(retained_patches: int, cfg: EncoderConfig, retained_groups: int | None = None) -> int:
    if retained_groups is None:
        retained_groups = retained_patches // cfg.group_size**2
    return 2 * (retained_patches * cfg.patch_macs + retained_groups * cfg.projection_macs)


def flops_prefill(n_total: int, n_recomputed: int, cfg: LlmConfig) -> int:
    if not 0 <= n_recomputed <= n_total:
        raise ValueError(f"need 0 <= n_recomputed ({n_recomputed}) <= n_total ({n_total})")
    d, f, L = cfg.model_dim, cfg.mlp_dim, cfg.layers
    r, n = n_recomputed, n_total
    per_layer = r * (4 * d * d + 2 * d * f) + r * n * 2 * d
    return 2 * (r * cfg.token_dim * d + L * per_layer)


def flops_rope(n_reused: int, cfg: LlmConfig) -> int:
    # 4 mul + 2 add per rotated channel pair
    return 3 * cfg.layers * cfg.model_dim * n_reused


@dataclass
class WindowStats:
    index: int
    start: int
    stop: int
    tokens_full: int
    tokens_retained: int
    patches_full: int
    patches_retained: int
    positions: int
    recomputed_positions: int
    anchor_positions: int
    reused_positions: int
    flops_vit: int
    flops_prefill: int
    flops_rope: int
    drift_mean: float = 0.0
    drift_max: float = 0.0
    readout_agreement: float = 1.0


_COUNTERS = (
    "windows", "frames_decoded", "frames_in_windows", "tokens_full", "tokens_retained",
    "patches_full", "patches_retained", "positions", "recomputed_positions",
    "anchor_positions", "reused_positions", "flops_vit", "flops_prefill", "flops_rope",
    "bitstream_bytes", "raw_bytes", "bytes_transmitted",
)


@dataclass
class RunReport:
    config: dict[str, str] = field(default_factory=dict)
    windows: int = 0
    frames_decoded: int = 0
    frames_in_windows: int = 0
    tokens_full: int = 0
    tokens_retained: int = 0
    patches_full: int = 0
    patches_retained: int = 0
    positions: int = 0
    recomputed_positions: int = 0
    anchor_positions: int = 0
    reused_positions: int = 0
    flops_vit: int = 0
    flops_prefill: int = 0
    flops_rope: int = 0
    bitstream_bytes: int = 0
    raw_bytes: int = 0
    bytes_transmitted: int = 0
    drift_sum: float = 0.0
    drift_max: float = 0.0
    agreement_sum: float = 0.0
    per_window: list[WindowStats] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict, compare=False)

    @property
    def flops_total(self) -> int:
        return self.flops_vit + self.flops_prefill + self.flops_rope

    @property
    def drift_mean(self) -> float:
        return self.drift_sum / self.windows if self.windows else 0.0

    @property
    def readout_agreement(self) -> float:
        return self.agreement_sum / self.windows if self.windows else 1.0

    def add_window(self, ws: WindowStats) -> None:
        self.per_window.append(ws)
        self.windows += 1
        self.frames_in_windows += ws.stop - ws.start
        for name in (
            "tokens_full", "tokens_retained", "patches_full", "patches_retained", "positions",
            "recomputed_positions", "anchor_positions", "reused_positions",
            "flops_vit", "flops_prefill", "flops_rope",
        ):
            setattr(self, name, getattr(self, name) + getattr(ws, name))
        self.drift_sum += ws.drift_mean
        self.drift_max = max(self.drift_max, ws.drift_max)
        self.agreement_sum += ws.readout_agreement

    def merge(self, other: "RunReport") -> "RunReport":
        """Combine two streams' reports; counters add, maxima take the max."""
        out = RunReport(config=dict(self.config))
        for name in _COUNTERS:
            setattr(out, name, getattr(self, name) + getattr(other, name))
        out.drift_sum = self.drift_sum + other.drift_sum
        out.agreement_sum = self.agreement_sum + other.agreement_sum
        out.drift_max = max(self.drift_max, other.drift_max)
        out.per_window = self.per_window + other.per_window
        for k in set(self.timings) | set(other.timings):
            out.timings[k] = self.timings.get(k, 0.0) + other.timings.get(k, 0.0)
        return out

    def to_text(self, timings: bool = True) -> str:
        lines = [f"# cost model: {COST_MODEL}"]
        lines += [f"config.{k}={v}" for k, v in sorted(self.config.items())]
        lines += [f"{name}={getattr(self, name)}" for name in _COUNTERS]
        lines.append(f"flops_total={self.flops_total}")
        lines.append(f"drift_mean={self.drift_mean!r}")
        lines.append(f"drift_max={self.drift_max!r}")
        lines.append(f"readout_agreement={self.readout_agreement!r}")
        if timings:
            lines += [f"time.{k}={v:.6f}" for k, v in sorted(self.timings.items())]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        names = [f.name for f in fields(WindowStats)]
        rows = [",".join(names)]
        for ws in self.per_window:
            rows.append(",".join(str(getattr(ws, n)) for n in names))
        return "\n".join(rows) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunReport":
        rep = cls()
        values: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"report line {lineno}: expected key=value, got {line!r}")
            k, v = line.split("=", 1)
            values[k.strip()] = v.strip()
        for k, v in values.items():
            if k.startswith("config."):
                rep.config[k[len("config."):]] = v
            elif k.startswith("time."):
                rep.timings[k[len("time."):]] = float(v)
            elif k in _COUNTERS:
                setattr(rep, k, int(v))
        rep.drift_max = float(values.get("drift_max", 0.0))
        rep.drift_sum = float(values.get("drift_mean", 0.0)) * rep.windows
        rep.agreement_sum = float(values.get("readout_agreement", 1.0)) * rep.windows
        return rep


def _reduction(optimized: float, baseline: float) -> float:
    if baseline <= 0:
        return 0.0
    return min(1.0, max(0.0, 1.0 - optimized / baseline))


@dataclass(frozen=True)
class Savings:
    token_reduction: float
    flop_reduction: float
    vit_flop_reduction: float
    prefill_flop_reduction: float
    byte_reduction: float
    byte_ratio: float
    redundancy_factor: float

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in asdict(self).items())


_SAME_STREAM_KEYS = ("window_frames", "stride_frames")


def savings_summary(full: RunReport, optimized: RunReport) -> Savings:
    """Fractions saved by ``optimized`` relative to the ``full`` baseline, each in [0, 1]."""
    for key in _SAME_STREAM_KEYS:
        a, b = full.config.get(key), optimized.config.get(key)
        if a is not None and b is not None and a != b:
            raise ValueError(f"reports disagree on {key}: {a} vs {b}")
    if full.frames_decoded != optimized.frames_decoded or full.raw_bytes != optimized.raw_bytes:
        raise ValueError("reports describe different streams")
    w = float(full.config.get("window_frames", 0) or 0)
    s = float(full.config.get("stride_frames", 0) or 0)
    ratio = optimized.bytes_transmitted / full.bytes_transmitted if full.bytes_transmitted else 1.0
    return Savings(
        token_reduction=_reduction(optimized.tokens_retained, full.tokens_retained),
        flop_reduction=_reduction(optimized.flops_total, full.flops_total),
        vit_flop_reduction=_reduction(optimized.flops_vit, full.flops_vit),
        prefill_flop_reduction=_reduction(
            optimized.flops_prefill + optimized.flops_rope, full.flops_prefill + full.flops_rope
        ),
        byte_reduction=_reduction(optimized.bytes_transmitted, full.bytes_transmitted),
        byte_ratio=ratio,
        redundancy_factor=w / s if s else math.nan,
    )


class CdfRow(NamedTuple):
    tau: float
    percentile: float
    ratio: float


def similar_patch_ratios(
    video: RawVideo,
    thresholds: Sequence[float],
    gop_size: int = 16,
    block_size: int = 8,
    search_radius: int = 4,
    patch_size: int = 8,
    alpha: float = 0.0,
) -> dict[float, list[float]]:
    """Per-P-frame fraction of patches whose motion score is below each threshold."""
    spec = PatchGridSpec.for_frame(video.height, video.width, patch_size, group_size=1)
    out: dict[float, list[float]] = {float(t): [] for t in thresholds}
    bs = encode(video, gop_size, block_size, search_radius)
    for frame in decode(bs):
        if frame.frame_type is not FrameType.P:
            continue
        V, R = resample_to_patches(frame.motion, frame.residual, spec)
        M = build_motion_mask(V, R, alpha).M
        for t in out:
            out[t].append(float(np.mean(M < t)))
    return out


def similar_patch_cdf(
    videos: Iterable[RawVideo],
    thresholds: Sequence[float],
    percentiles: Sequence[float] = (0, 10, 25, 50, 75, 90, 100),
    **codec_args,
) -> list[CdfRow]:
    videos = list(videos)
    if not videos:
        raise ValueError("need at least one video")
    pooled: dict[float, list[float]] = {float(t): [] for t in thresholds}
    for v in videos:
        for t, ratios in similar_patch_ratios(v, thresholds, **codec_args).items():
            pooled[t].extend(ratios)
    rows = []
    for t, ratios in pooled.items():
        if not ratios:
            continue
        for pct, val in zip(percentiles, np.percentile(ratios, percentiles)):
            rows.append(CdfRow(t, float(pct), float(val)))
    return rows


def format_cdf(rows: Sequence[CdfRow]) -> str:
    lines = ["tau,percentile,ratio"]
    lines += [f"{r.tau!r},{r.percentile!r},{r.ratio!r}" for r in rows]
    return "\n".join(lines) + "\n"
