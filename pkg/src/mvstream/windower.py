"""Sliding windows over a once-decoded frame stream."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Any, Sequence


class WindowError(ValueError):
    pass


@dataclass(frozen=True)
class WindowConfig:
    window_frames: int
    stride_frames: int
    fps: float = 2.0

    def __post_init__(self):
        if not 1 <= self.stride_frames <= self.window_frames:
            raise WindowError(
                f"need 1 <= stride ({self.stride_frames}) <= window ({self.window_frames})"
            )

    @classmethod
    def from_stride_pct(cls, window_frames: int, stride_pct: float, fps: float = 2.0) -> "WindowConfig":
        stride = max(1, round(window_frames * stride_pct / 100.0))
        return cls(window_frames, stride, fps)

    @property
    def overlap_frames(self) -> int:
        return self.window_frames - self.stride_frames

    @property
    def window_seconds(self) -> float:
        return self.window_frames / self.fps


def window_bounds(k: int, cfg: WindowConfig) -> range:
    """Half-open frame interval ``[k*s, k*s + w)`` covered by window ``k``."""
    if k < 0:
        raise WindowError("window index must be >= 0")
    start = k * cfg.stride_frames
    return range(start, start + cfg.window_frames)


def redundancy_factor(cfg: WindowConfig) -> float:
    """Naive-recompute multiplier ``w / s`` relative to processing only new frames."""
    return cfg.window_frames / cfg.stride_frames


def wasted_fraction(cfg: WindowConfig) -> float:
    """Share of a naive window recompute spent on already-seen frames."""
    return 1.0 - cfg.stride_frames / cfg.window_frames


def count_windows(n_frames: int, cfg: WindowConfig) -> int:
    if n_frames < cfg.window_frames:
        return 0
    return (n_frames - cfg.window_frames) // cfg.stride_frames + 1


@dataclass(frozen=True)
class WindowView:
    index: int
    frame_range: range
    items: tuple  # shared per-frame records, in frame order

    @property
    def start(self) -> int:
        return self.frame_range.start

    @property
    def stop(self) -> int:
        return self.frame_range.stop

    def __len__(self) -> int:
        return len(self.frame_range)

    def item(self, frame_index: int) -> Any:
        return self.items[frame_index - self.start]


def overlap_split(prev: WindowView, cur: WindowView) -> tuple[range, range]:
    """Split ``cur`` into frames shared with ``prev`` and newly arrived ones."""
    if cur.index != prev.index + 1:
        raise WindowError(f"windows {prev.index} and {cur.index} are not consecutive")
    boundary = max(cur.start, min(prev.stop, cur.stop))
    return range(cur.start, boundary), range(boundary, cur.stop)


class Decimator:
    """Periodic frame decimation: keep every ``ceil(source/target)``-th frame."""

    def __init__(self, source_fps: float, target_fps: float | None = None):
        if target_fps is None or target_fps >= source_fps:
            self.step = 1
        else:
            self.step = math.ceil(source_fps / target_fps)

    def sample(self, source_index: int) -> int | None:
        """Sampled-frame index for ``source_index``, or None if dropped."""
        if source_index % self.step:
            return None
        return source_index // self.step


class FrameRing:
    """Bounded buffer of decoded frames that emits windows as they complete.

    Frames are pushed once, in decode order. Window ``k`` is emitted when
    frame ``k*s + w - 1`` arrives; frames are evicted once no future window
    can contain them. Views reference the stored records, nothing is copied.
    """

    def __init__(self, cfg: WindowConfig, allow_partial: bool = False):
        self.cfg = cfg
        self.allow_partial = allow_partial
        self._buf: deque[tuple[int, Any]] = deque()
        self._next_window = 0
        self.ingested = 0
        self.emitted = 0

    def __len__(self) -> int:
        return len(self._buf)

    @property
    def buffered_range(self) -> range:
        if not self._buf:
            return range(self.ingested, self.ingested)
        return range(self._buf[0][0], self._buf[-1][0] + 1)

    def push(self, index: int, item: Any) -> list[WindowView]:
        if index != self.ingested:
            raise WindowError(f"out-of-order push: got frame {index}, expected {self.ingested}")
        self._buf.append((index, item))
        self.ingested += 1
        out = []
        while True:
            bounds = window_bounds(self._next_window, self.cfg)
            if bounds.stop - 1 > index:
                break
            out.append(self._emit(bounds))
        return out

    def flush(self) -> list[WindowView]:
        """End of stream. Emits a truncated trailing window in batch mode only."""
        if not self.allow_partial:
            return []
        bounds = window_bounds(self._next_window, self.cfg)
        if bounds.start >= self.ingested:
            return []
        return [self._emit(range(bounds.start, self.ingested))]

    def _emit(self, bounds: range) -> WindowView:
        items = tuple(it for i, it in self._buf if i in bounds)
        view = WindowView(self._next_window, bounds, items)
        self._next_window += 1
        self.emitted += 1
        next_start = window_bounds(self._next_window, self.cfg).start
        while self._buf and self._buf[0][0] < next_start:
            self._buf.popleft()
        return view


def windows_of(items: Sequence[Any], cfg: WindowConfig, allow_partial: bool = False) -> list[WindowView]:
    ring = FrameRing(cfg, allow_partial)
    out = []
    for i, it in enumerate(items):
        out.extend(ring.push(i, it))
    out.extend(ring.flush())
    return out
