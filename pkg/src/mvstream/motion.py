"""Patch-level dynamic/static decisions from block-level codec metadata."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import FrameType, MotionField


class MaskError(ValueError):
    pass


@dataclass(frozen=True)
class PatchGridSpec:
    patch_size: int
    grid_h: int
    grid_w: int
    group_size: int = 2

    def __post_init__(self):
        if self.patch_size <= 0 or self.grid_h <= 0 or self.grid_w <= 0 or self.group_size <= 0:
            raise MaskError("patch grid dimensions must be positive")
        if self.grid_h % self.group_size or self.grid_w % self.group_size:
            raise MaskError(
                f"group size {self.group_size} does not divide grid {self.grid_h}x{self.grid_w}"
            )

    @classmethod
    def for_frame(cls, height: int, width: int, patch_size: int, group_size: int = 2) -> "PatchGridSpec":
        if height % patch_size or width % patch_size:
            raise MaskError(f"patch size {patch_size} does not divide frame {height}x{width}")
        return cls(patch_size, height // patch_size, width // patch_size, group_size)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.grid_h, self.grid_w)

    @property
    def n_patches(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def group_shape(self) -> tuple[int, int]:
        return (self.grid_h // self.group_size, self.grid_w // self.group_size)

    @property
    def n_groups(self) -> int:
        gh, gw = self.group_shape
        return gh * gw

    @property
    def frame_shape(self) -> tuple[int, int]:
        return (self.grid_h * self.patch_size, self.grid_w * self.patch_size)


@dataclass
class MotionMask:
    V: np.ndarray
    R: np.ndarray
    alpha: float

    @property
    def M(self) -> np.ndarray:
        return self.V + self.alpha * self.R


@dataclass(frozen=True)
class DynamicPatchMask:
    """Patches to encode for one frame, plus the P-frame union it came from.

    An I-frame encodes everything and resets ``p_union`` to empty; each P-frame
    encodes the union of its own detections and those of earlier P-frames in
    the same GOP.
    """

    active: np.ndarray  # (grid_h, grid_w) bool
    epoch: int
    p_union: np.ndarray | None = None

    @classmethod
    def initial(cls, spec: PatchGridSpec) -> "DynamicPatchMask":
        return cls(np.ones(spec.shape, dtype=bool), -1, np.zeros(spec.shape, dtype=bool))


def _patch_reduce(plane: np.ndarray, spec: PatchGridSpec, how: str) -> np.ndarray:
    """Max or mean of a per-pixel map over each patch; pixels beyond the map count as 0."""
    fh, fw = spec.frame_shape
    canvas = np.zeros((fh, fw), dtype=np.float64)
    h, w = min(fh, plane.shape[0]), min(fw, plane.shape[1])
    canvas[:h, :w] = plane[:h, :w]
    p = spec.patch_size
    tiles = canvas.reshape(spec.grid_h, p, spec.grid_w, p)
    return tiles.max(axis=(1, 3)) if how == "max" else tiles.mean(axis=(1, 3))


def resample_to_patches(
    field: MotionField, residual: np.ndarray | None, spec: PatchGridSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Map block motion magnitudes and residuals onto the patch grid.

    V is the max magnitude of any block overlapping the patch; R is the mean
    per-pixel |residual| over the patch, scaled to [0, 1]. Patch area not
    covered by a coded block counts as static.
    """
    b = field.block_size
    rows, cols = field.shape
    fh, fw = spec.frame_shape
    p = spec.patch_size
    # block padding may overshoot the frame by < b; patch padding may overshoot the coded area by < p
    if not (fh - p < rows * b < fh + b and fw - p < cols * b < fw + b):
        raise MaskError(
            f"motion field {rows}x{cols}@{b} does not match frame {fh}x{fw}"
        )
    mag = np.repeat(np.repeat(field.magnitudes(), b, axis=0), b, axis=1)
    V = _patch_reduce(mag, spec, "max")
    if residual is None:
        R = np.zeros(spec.shape)
    else:
        if residual.shape != (rows * b, cols * b):
            raise MaskError(f"residual {residual.shape} does not match motion field")
        R = _patch_reduce(np.abs(residual.astype(np.float64)), spec, "mean") / 255.0
    return V, R


def build_motion_mask(V: np.ndarray, R: np.ndarray, alpha: float = 0.0) -> MotionMask:
    V = np.asarray(V, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    if V.shape != R.shape:
        raise MaskError(f"shape mismatch: V {V.shape} vs R {R.shape}")
    if alpha < 0:
        raise MaskError("alpha must be >= 0")
    return MotionMask(V, R, float(alpha))


def threshold_mask(mask: MotionMask | np.ndarray, tau: float) -> np.ndarray:
    # inclusive so that tau == 0 marks every patch dynamic
    M = mask.M if isinstance(mask, MotionMask) else np.asarray(mask)
    return M >= tau


def accumulate_gop(
    state: DynamicPatchMask, frame_dynamic: np.ndarray | None, frame_type: FrameType
) -> DynamicPatchMask:
    shape = state.active.shape
    if frame_type is FrameType.I:
        return DynamicPatchMask(np.ones(shape, dtype=bool), state.epoch + 1, np.zeros(shape, dtype=bool))
    union = state.p_union if state.p_union is not None else np.zeros(shape, dtype=bool)
    if frame_dynamic is not None:
        if frame_dynamic.shape != shape:
            raise MaskError(f"mask shape mismatch: {frame_dynamic.shape} vs {shape}")
        union = union | frame_dynamic
    return DynamicPatchMask(union.copy(), state.epoch, union)


def group_view(patch_mask: np.ndarray, spec: PatchGridSpec) -> np.ndarray:
    """Reshape a patch grid ``(grid_h, grid_w, ...)`` to ``(groups_h, groups_w, g, g, ...)``."""
    g = spec.group_size
    gh, gw = spec.group_shape
    return patch_mask.reshape(gh, g, gw, g, *patch_mask.shape[2:]).swapaxes(1, 2)


def expand_group_complete(
    active: DynamicPatchMask | np.ndarray, spec: PatchGridSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(group_retain, patch_retained)``; a group survives if any member is active."""
    act = active.active if isinstance(active, DynamicPatchMask) else np.asarray(active, dtype=bool)
    if act.shape != spec.shape:
        raise MaskError(f"mask {act.shape} does not match grid {spec.shape}")
    groups = group_view(act, spec).any(axis=(2, 3))
    g = spec.group_size
    patches = np.repeat(np.repeat(groups, g, axis=0), g, axis=1)
    return groups, patches


def is_group_complete(patch_mask: np.ndarray, spec: PatchGridSpec) -> bool:
    gv = group_view(np.asarray(patch_mask, dtype=bool), spec)
    return bool(np.all(gv.all(axis=(2, 3)) == gv.any(axis=(2, 3))))


class MotionAnalyzer:
    """Per-stream analyzer: frame metadata in, group-complete retention out."""

    def __init__(self, spec: PatchGridSpec, tau: float = 0.25, alpha: float = 0.0):
        if tau < 0:
            raise MaskError("tau must be >= 0")
        self.spec = spec
        self.tau = tau
        self.alpha = alpha
        self.state = DynamicPatchMask.initial(spec)
        self.last_dynamic: np.ndarray | None = None  # this frame's own detections

    def update(self, frame_type: FrameType, field: MotionField | None, residual=None) -> DynamicPatchMask:
        dynamic = None
        if frame_type is FrameType.P:
            V, R = resample_to_patches(field, residual if self.alpha else None, self.spec)
            dynamic = threshold_mask(build_motion_mask(V, R, self.alpha), self.tau)
        self.last_dynamic = dynamic
        self.state = accumulate_gop(self.state, dynamic, frame_type)
        return self.state


def format_mask_line(frame_index: int, mask: DynamicPatchMask) -> str:
    rows = " ".join("".join("1" if v else "0" for v in row) for row in mask.active)
    return f"{frame_index} {mask.epoch} {rows}"


def parse_mask_line(line: str) -> tuple[int, int, np.ndarray]:
    idx, epoch, *rows = line.split()
    grid = np.array([[c == "1" for c in row] for row in rows], dtype=bool)
    return int(idx), int(epoch), grid
