"""Toy per-patch vision encoder with a 2x2 spatial-merge projector.

Each patch goes through a small fixed MLP independently, so running the
encoder on a subset of patches gives exactly the embeddings the full run
would have produced at those positions. An optional cross-patch attention
layer breaks that property on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .motion import PatchGridSpec, group_view, is_group_complete


class EncoderError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    patch_size: int = 8
    embed_dim: int = 32
    token_dim: int = 32
    group_size: int = 2
    seed: int = 0
    cross_attention: bool = False

    @property
    def patch_macs(self) -> int:
        """Multiply-adds of the per-patch MLP."""
        p2 = self.patch_size**2
        return p2 * self.embed_dim + self.embed_dim * self.embed_dim

    @property
    def projection_macs(self) -> int:
        return self.group_size**2 * self.embed_dim * self.token_dim


class TokenOrigin(NamedTuple):
    frame: int  # -1 for prompt tokens
    group: int

    @property
    def is_prompt(self) -> bool:
        return self.frame < 0


@dataclass
class VisualToken:
    vector: np.ndarray
    origin: TokenOrigin
    source_epoch: int


@dataclass
class PatchEmbeddings:
    values: np.ndarray  # (grid_h, grid_w, embed_dim), NaN where absent
    present: np.ndarray  # (grid_h, grid_w) bool
    patches_encoded: int


class VisionEncoder:
    def __init__(self, cfg: EncoderConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        p2, d, g2, dt = cfg.patch_size**2, cfg.embed_dim, cfg.group_size**2, cfg.token_dim
        self.w1 = rng.standard_normal((p2, d)) / np.sqrt(p2)
        self.b1 = rng.standard_normal(d) * 0.1
        self.w2 = rng.standard_normal((d, d)) / np.sqrt(d)
        self.b2 = rng.standard_normal(d) * 0.1
        self.proj = rng.standard_normal((g2 * d, dt)) / np.sqrt(g2 * d)
        for w in (self.w1, self.b1, self.w2, self.b2, self.proj):
            w.flags.writeable = False

    def embed(self, patches: np.ndarray) -> np.ndarray:
        """Per-patch MLP on an ``(n, patch_size**2)`` batch."""
        h = np.tanh(patches @ self.w1 + self.b1)
        out = h @ self.w2 + self.b2
        if self.cfg.cross_attention and len(out) > 1:
            scores = out @ out.T / np.sqrt(out.shape[1])
            scores = np.exp(scores - scores.max(axis=1, keepdims=True))
            out = out + (scores / scores.sum(axis=1, keepdims=True)) @ out
        return out


def patchify(frame: np.ndarray, spec: PatchGridSpec) -> np.ndarray:
    """Row-major ``(n_patches, patch_size**2)`` samples scaled to [0, 1]."""
    frame = np.asarray(frame)
    if frame.shape != spec.frame_shape:
        raise EncoderError(f"frame {frame.shape} does not match patch grid {spec.frame_shape}")
    p = spec.patch_size
    tiles = frame.reshape(spec.grid_h, p, spec.grid_w, p).swapaxes(1, 2)
    return tiles.reshape(spec.n_patches, p * p).astype(np.float64) / 255.0


def encode_selected(
    patches: np.ndarray, retained: np.ndarray, encoder: VisionEncoder, spec: PatchGridSpec
) -> PatchEmbeddings:
    """Run the encoder on retained patches only, restoring the spatial layout."""
    retained = np.asarray(retained, dtype=bool)
    if retained.shape != spec.shape:
        raise EncoderError(f"mask {retained.shape} does not match grid {spec.shape}")
    if not is_group_complete(retained, spec):
        raise EncoderError("retention mask is not group-complete")
    d = encoder.cfg.embed_dim
    values = np.full((spec.grid_h, spec.grid_w, d), np.nan)
    idx = np.flatnonzero(retained.ravel())
    if len(idx):
        values.reshape(-1, d)[idx] = encoder.embed(patches[idx])
    return PatchEmbeddings(values, retained.copy(), len(idx))


def project_downsample(
    embeddings: PatchEmbeddings,
    groups: np.ndarray,
    encoder: VisionEncoder,
    spec: PatchGridSpec,
    frame_index: int = 0,
    epoch: int = 0,
) -> list[VisualToken]:
    """One token per retained group: concat member embeddings row-major, then project."""
    groups = np.asarray(groups, dtype=bool)
    if groups.shape != spec.group_shape:
        raise EncoderError(f"group mask {groups.shape} does not match {spec.group_shape}")
    d = encoder.cfg.embed_dim
    members = group_view(embeddings.values, spec)  # (gh, gw, g, g, d)
    present = group_view(embeddings.present, spec)
    gidx = np.flatnonzero(groups.ravel())
    if len(gidx) == 0:
        return []
    flat_present = present.reshape(-1, spec.group_size**2)[gidx]
    if not flat_present.all():
        bad = int(gidx[np.flatnonzero(~flat_present.all(axis=1))[0]])
        raise EncoderError(f"retained group {bad} has an absent member patch")
    concat = members.reshape(-1, spec.group_size**2 * d)[gidx]
    vectors = concat @ encoder.proj
    return [
        VisualToken(vectors[k], TokenOrigin(frame_index, int(g)), epoch)
        for k, g in enumerate(gidx)
    ]


def encode_frame(
    frame: np.ndarray,
    retained: np.ndarray,
    groups: np.ndarray,
    encoder: VisionEncoder,
    spec: PatchGridSpec,
    frame_index: int = 0,
    epoch: int = 0,
) -> tuple[list[VisualToken], int]:
    emb = encode_selected(patchify(frame, spec), retained, encoder, spec)
    tokens = project_downsample(emb, groups, encoder, spec, frame_index, epoch)
    return tokens, emb.patches_encoded
