"""Toy RoPE decoder prefill with selective KV-cache refresh across windows.

A window's token sequence is its retained visual tokens in (frame, group)
order followed by the prompt tokens; positions are the compacted indices
0..n-1 of that sequence. When the window slides, each current token gets a
disposition:

* REUSE            - keys rotated by ``p_new - p_old``, values copied,
                     final hidden state carried over; nothing recomputed.
* RECOMPUTE_ANCHOR - overlap token from an I-frame (or the overlap's first
                     frame), recomputed from its cached visual embedding.
* RECOMPUTE_NEW    - new-frame tokens, prompt tokens, and anything with no
                     cached source.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .codec import FrameType
from .encoder import TokenOrigin


class KVCacheError(ValueError):
    pass


class Disposition(enum.IntEnum):
    RECOMPUTE_NEW = 0
    RECOMPUTE_ANCHOR = 1
    REUSE = 2


REFRESH_MODES = ("full", "naive_reuse", "selective")


@dataclass(frozen=True)
class LlmConfig:
    layers: int = 2
    heads: int = 2
    model_dim: int = 32
    token_dim: int = 32
    rope_base: float = 10000.0
    mlp_ratio: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.layers < 1 or self.heads < 1:
            raise KVCacheError("layers and heads must be >= 1")
        if self.model_dim % self.heads:
            raise KVCacheError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.head_dim % 2:
            raise KVCacheError(f"head_dim {self.head_dim} must be even for rotary pairs")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    @property
    def mlp_dim(self) -> int:
        return self.mlp_ratio * self.model_dim


def rope_frequencies(cfg: LlmConfig) -> np.ndarray:
    hd = cfg.head_dim
    return cfg.rope_base ** (-np.arange(0, hd, 2, dtype=np.float64) / hd)


def _rotate(x: np.ndarray, angles: np.ndarray) -> np.ndarray:
    # interleaved pairs (2i, 2i+1) share frequency i
    even, odd = x[..., 0::2], x[..., 1::2]
    cos, sin = np.cos(angles), np.sin(angles)
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def rope_rotate(key: np.ndarray, delta_p, cfg: LlmConfig) -> np.ndarray:
    """Apply the rotary transform ``R(delta_p)`` to keys.

    ``key`` has a trailing axis of ``head_dim`` or ``model_dim`` (heads laid
    out contiguously). ``delta_p`` is a scalar or one offset per entry of the
    leading axis.
    """
    hd = cfg.head_dim
    if hd % 2:
        raise KVCacheError("head_dim must be even")
    x = np.asarray(key, dtype=np.float64)
    shape = x.shape
    if shape[-1] != hd:
        if shape[-1] % hd:
            raise KVCacheError(f"key width {shape[-1]} is not a multiple of head_dim {hd}")
        x = x.reshape(*shape[:-1], shape[-1] // hd, hd)
    delta = np.asarray(delta_p, dtype=np.float64)
    if delta.ndim > 1 or (delta.ndim == 1 and len(delta) != x.shape[0]):
        raise KVCacheError("delta_p must be a scalar or one offset per leading entry")
    delta = delta.reshape(delta.shape + (1,) * (x.ndim - 1 - delta.ndim))
    out = _rotate(x, delta[..., None] * rope_frequencies(cfg))
    return out.reshape(shape)


def _rms_norm(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + 1e-6)


def _silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


class ToyLlm:
    """Pre-norm decoder stack with seeded, frozen random weights."""

    def __init__(self, cfg: LlmConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        d, dt, f = cfg.model_dim, cfg.token_dim, cfg.mlp_dim
        self.w_in = rng.standard_normal((dt, d)) / np.sqrt(dt)
        self.layers = []
        for _ in range(cfg.layers):
            self.layers.append(
                {
                    "wq": rng.standard_normal((d, d)) / np.sqrt(d),
                    "wk": rng.standard_normal((d, d)) / np.sqrt(d),
                    "wv": rng.standard_normal((d, d)) / np.sqrt(d),
                    "wo": rng.standard_normal((d, d)) / np.sqrt(d),
                    "w1": rng.standard_normal((d, f)) / np.sqrt(d),
                    "w2": rng.standard_normal((f, d)) / np.sqrt(f),
                }
            )
        self.inv_freq = rope_frequencies(cfg)

    def embed(self, tokens: np.ndarray) -> np.ndarray:
        return np.asarray(tokens, dtype=np.float64) @ self.w_in

    def raw_keys(self, layer: int, x: np.ndarray) -> np.ndarray:
        """Pre-rotation keys ``(m, heads, head_dim)`` for layer inputs ``x``."""
        cfg = self.cfg
        return (_rms_norm(x) @ self.layers[layer]["wk"]).reshape(len(x), cfg.heads, cfg.head_dim)

    def qkv(self, layer: int, x: np.ndarray, positions: np.ndarray):
        cfg, w = self.cfg, self.layers[layer]
        h = _rms_norm(x)
        m = len(x)
        ang = positions.astype(np.float64)[:, None, None] * self.inv_freq
        q = _rotate((h @ w["wq"]).reshape(m, cfg.heads, cfg.head_dim), ang)
        k = _rotate((h @ w["wk"]).reshape(m, cfg.heads, cfg.head_dim), ang)
        v = (h @ w["wv"]).reshape(m, cfg.heads, cfg.head_dim)
        return q, k, v

    def attend(self, layer: int, q, q_pos, keys, values) -> np.ndarray:
        """Causal attention of ``q`` (at ``q_pos``) over the whole assembled K/V."""
        n = keys.shape[0]
        scores = np.einsum("mhd,nhd->hmn", q, keys) / np.sqrt(self.cfg.head_dim)
        future = np.arange(n)[None, :] > q_pos[:, None]
        scores = np.where(future[None], -np.inf, scores)
        scores = np.exp(scores - scores.max(axis=-1, keepdims=True))
        probs = scores / scores.sum(axis=-1, keepdims=True)
        out = np.einsum("hmn,nhd->mhd", probs, values).reshape(len(q), -1)
        return out @ self.layers[layer]["wo"]

    def finish_block(self, layer: int, x, attn) -> np.ndarray:
        w = self.layers[layer]
        x = x + attn
        return x + _silu(_rms_norm(x) @ w["w1"]) @ w["w2"]


@dataclass
class CacheSegment:
    keys: np.ndarray  # (layers, n, heads, head_dim), rotated at their positions
    values: np.ndarray  # (layers, n, heads, head_dim)
    hidden: np.ndarray  # (n, model_dim) final hidden states
    embeddings: np.ndarray | None  # (n, token_dim) cached input embeddings
    origins: list[TokenOrigin]
    window_index: int = 0
    frame_range: range | None = None

    def __len__(self) -> int:
        return self.keys.shape[1]

    @property
    def positions(self) -> np.ndarray:
        return np.arange(len(self))

    def position_of(self) -> dict[TokenOrigin, int]:
        return {o: i for i, o in enumerate(self.origins)}


@dataclass
class PrefillPlan:
    dispositions: np.ndarray  # (n,) Disposition values
    p_old: np.ndarray  # (n,) source position in the previous segment, -1 if none
    origins: list[TokenOrigin] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.dispositions)

    @property
    def p_new(self) -> np.ndarray:
        return np.arange(len(self))

    def count(self, disposition: Disposition) -> int:
        return int(np.sum(self.dispositions == disposition))

    @property
    def n_recomputed(self) -> int:
        return int(np.sum(self.dispositions != Disposition.REUSE))

    @property
    def n_reused(self) -> int:
        return self.count(Disposition.REUSE)

    @classmethod
    def all_recompute(cls, origins: Sequence[TokenOrigin]) -> "PrefillPlan":
        n = len(origins)
        return cls(np.full(n, Disposition.RECOMPUTE_NEW, dtype=np.int64), np.full(n, -1), list(origins))


def plan_refresh(
    prev: CacheSegment,
    cur_origins: Sequence[TokenOrigin],
    frame_types: Mapping[int, FrameType],
    overlap: range,
    mode: str = "selective",
) -> PrefillPlan:
    """Assign a disposition to each token of the current window.

    ``selective`` anchors I-frame tokens and the first overlap frame;
    ``naive_reuse`` reuses every cached overlap token; ``full`` recomputes all.
    """
    if mode not in REFRESH_MODES:
        raise KVCacheError(f"unknown refresh mode {mode!r}")
    if len(overlap) and prev.frame_range is not None:
        if overlap.start < prev.frame_range.start or overlap.stop > prev.frame_range.stop:
            raise KVCacheError(
                f"overlap {overlap.start}..{overlap.stop} not covered by previous window "
                f"{prev.frame_range.start}..{prev.frame_range.stop}"
            )
    index = prev.position_of()
    n = len(cur_origins)
    disp = np.full(n, Disposition.RECOMPUTE_NEW, dtype=np.int64)
    p_old = np.full(n, -1, dtype=np.int64)
    if mode != "full":
        for j, o in enumerate(cur_origins):
            if o.is_prompt or o.frame not in overlap or o not in index:
                continue
            p_old[j] = index[o]
            anchor = frame_types[o.frame] is FrameType.I or o.frame == overlap.start
            if mode == "selective" and anchor:
                disp[j] = Disposition.RECOMPUTE_ANCHOR
            else:
                disp[j] = Disposition.REUSE
    return PrefillPlan(disp, p_old, list(cur_origins))


def full_prefill(
    tokens: np.ndarray,
    model: ToyLlm,
    origins: Sequence[TokenOrigin] | None = None,
    window_index: int = 0,
    frame_range: range | None = None,
) -> tuple[CacheSegment, np.ndarray]:
    tokens = np.asarray(tokens, dtype=np.float64)
    n = len(tokens)
    if n == 0:
        raise KVCacheError("empty token sequence")
    cfg = model.cfg
    pos = np.arange(n)
    keys = np.empty((cfg.layers, n, cfg.heads, cfg.head_dim))
    values = np.empty_like(keys)
    x = model.embed(tokens)
    for layer in range(cfg.layers):
        q, k, v = model.qkv(layer, x, pos)
        keys[layer], values[layer] = k, v
        x = model.finish_block(layer, x, model.attend(layer, q, pos, keys[layer], values[layer]))
    if origins is None:
        origins = [TokenOrigin(-1, j) for j in range(n)]
    seg = CacheSegment(keys, values, x, tokens.copy(), list(origins), window_index, frame_range)
    return seg, x


def selective_prefill(
    plan: PrefillPlan,
    prev: CacheSegment | None,
    tokens: np.ndarray,
    model: ToyLlm,
    window_index: int = 0,
    frame_range: range | None = None,
) -> tuple[CacheSegment, np.ndarray]:
    """Prefill the current window following ``plan``.

    ``tokens`` holds the current window's embeddings; entries at REUSE and
    ANCHOR positions are not read (the cached embeddings are used instead).
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    n = len(plan)
    if len(tokens) != n:
        raise KVCacheError(f"plan covers {n} tokens but {len(tokens)} embeddings given")
    cfg = model.cfg
    disp = plan.dispositions
    rec = np.flatnonzero(disp != Disposition.REUSE)
    reu = np.flatnonzero(disp == Disposition.REUSE)
    cached = np.flatnonzero(disp != Disposition.RECOMPUTE_NEW)
    src = plan.p_old

    if len(cached):
        if prev is None:
            raise KVCacheError("plan reuses cache entries but no previous segment given")
        s = src[cached]
        if s.min() < 0 or s.max() >= len(prev):
            raise KVCacheError("plan source positions fall outside the previous segment")
        if plan.origins:
            for j in cached:
                if plan.origins[j] != prev.origins[src[j]]:
                    raise KVCacheError(
                        f"token {j} origin {plan.origins[j]} does not match cached "
                        f"{prev.origins[src[j]]} at position {src[j]}"
                    )

    emb = tokens.copy()
    if len(cached):
        anchors = np.flatnonzero(disp == Disposition.RECOMPUTE_ANCHOR)
        if prev.embeddings is None:
            if len(anchors):
                raise KVCacheError("anchor recompute needs cached embeddings")
        else:
            emb[cached] = prev.embeddings[src[cached]]

    keys = np.empty((cfg.layers, n, cfg.heads, cfg.head_dim))
    values = np.empty_like(keys)
    delta = reu - src[reu]
    x = model.embed(emb[rec])
    for layer in range(cfg.layers):
        if len(reu):
            keys[layer][reu] = rope_rotate(prev.keys[layer][src[reu]], delta, cfg)
            values[layer][reu] = prev.values[layer][src[reu]]
        if len(rec):
            q, k, v = model.qkv(layer, x, rec)
            keys[layer][rec], values[layer][rec] = k, v
            x = model.finish_block(layer, x, model.attend(layer, q, rec, keys[layer], values[layer]))

    hidden = np.empty((n, cfg.model_dim))
    hidden[rec] = x
    if len(reu):
        hidden[reu] = prev.hidden[src[reu]]
    origins = plan.origins or [TokenOrigin(-1, j) for j in range(n)]
    seg = CacheSegment(keys, values, hidden, emb, list(origins), window_index, frame_range)
    return seg, hidden


def make_prompt(n_tokens: int, token_dim: int, seed: int = 7) -> np.ndarray:
    """Fixed stand-in for an embedded text query."""
    return np.random.default_rng(seed).standard_normal((n_tokens, token_dim))


@dataclass(frozen=True)
class DriftStats:
    mean: float
    max: float
    agreement: float


def default_readout(model_dim: int, classes: int = 16, seed: int = 1234) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((model_dim, classes))


def measure_drift(h_a: np.ndarray, h_b: np.ndarray, readout: np.ndarray | None = None) -> DriftStats:
    """Relative L2 distance of ``h_a`` from reference ``h_b``, per position."""
    h_a = np.asarray(h_a, dtype=np.float64)
    h_b = np.asarray(h_b, dtype=np.float64)
    if h_a.shape != h_b.shape:
        raise KVCacheError(f"shape mismatch: {h_a.shape} vs {h_b.shape}")
    if h_a.size == 0:
        return DriftStats(0.0, 0.0, 1.0)
    rel = np.linalg.norm(h_a - h_b, axis=-1) / np.maximum(np.linalg.norm(h_b, axis=-1), 1e-12)
    if readout is None:
        readout = default_readout(h_a.shape[-1])
    agree = np.mean((h_a @ readout).argmax(-1) == (h_b @ readout).argmax(-1))
    return DriftStats(float(rel.mean()), float(rel.max()), float(agree))
