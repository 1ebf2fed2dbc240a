"""Synthetic videos with known motion, used as ground truth for the analyzer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codec import RawVideo

KINDS = ("static", "translating_object", "multi_object", "noise", "scene_cut")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str = "translating_object"
    width: int = 64
    height: int = 64
    length: int = 32
    fps: int = 2
    velocity: tuple[int, int] = (1, 0)  # px/frame (vx, vy)
    object_size: int = 16
    n_objects: int = 3
    cut_frame: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScenarioError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        if self.width <= 0 or self.height <= 0 or self.length <= 0:
            raise ScenarioError("width, height and length must be positive")
        if self.kind in ("translating_object", "multi_object"):
            if self.object_size > min(self.width, self.height):
                raise ScenarioError(
                    f"object of size {self.object_size} does not fit a {self.width}x{self.height} frame"
                )


Box = tuple[int, int, int, int]  # x0, y0, x1, y1 (half-open)


@dataclass
class Scenario:
    spec: ScenarioSpec
    video: RawVideo
    boxes: list[list[Box]] = field(default_factory=list)  # per frame, per object


def _bounce(p: int, span: int) -> int:
    """Reflect a free coordinate into ``[0, span]``."""
    if span == 0:
        return 0
    period = 2 * span
    q = p % period
    return q if q <= span else period - q


def _texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    return rng.integers(0, 256, size=(h, w), dtype=np.uint8)


def _objects(spec: ScenarioSpec, rng: np.random.Generator, background: np.ndarray):
    h, w, size = spec.height, spec.width, spec.object_size
    if spec.kind == "translating_object":
        starts = [((w - size) // 4, (h - size) // 2)]
        velocities = [spec.velocity]
    else:
        n = spec.n_objects
        starts = [(int(rng.integers(0, w - size + 1)), int(rng.integers(0, h - size + 1))) for _ in range(n)]
        vmax = max(abs(spec.velocity[0]), abs(spec.velocity[1]), 1)
        velocities = [tuple(int(v) for v in rng.integers(-vmax, vmax + 1, size=2)) for _ in range(n)]
    textures = [_texture(rng, size, size) for _ in starts]

    frames, boxes = [], []
    for t in range(spec.length):
        plane = background.copy()
        fboxes = []
        for (x0, y0), (vx, vy), tex in zip(starts, velocities, textures):
            x = _bounce(x0 + vx * t, w - size)
            y = _bounce(y0 + vy * t, h - size)
            plane[y : y + size, x : x + size] = tex
            fboxes.append((x, y, x + size, y + size))
        frames.append(plane)
        boxes.append(fboxes)
    return frames, boxes


def generate_scenario(spec: ScenarioSpec) -> Scenario:
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    background = _texture(rng, h, w)
    boxes: list[list[Box]] = [[] for _ in range(spec.length)]

    if spec.kind == "static":
        frames = [background] * spec.length
    elif spec.kind in ("translating_object", "multi_object"):
        frames, boxes = _objects(spec, rng, background)
    elif spec.kind == "noise":
        frames = [background] + [_texture(rng, h, w) for _ in range(spec.length - 1)]
    else:  # scene_cut
        cut = spec.cut_frame if spec.cut_frame is not None else spec.length // 2
        other = _texture(rng, h, w)
        frames = [background if t < cut else other for t in range(spec.length)]

    video = RawVideo(w, h, spec.fps, np.stack(frames))
    return Scenario(spec, video, boxes)


def motion_sweep(velocities, **kwargs) -> list[Scenario]:
    """Translating-object scenarios at several speeds, otherwise identical."""
    return [generate_scenario(ScenarioSpec(kind="translating_object", velocity=(v, 0), **kwargs)) for v in velocities]
