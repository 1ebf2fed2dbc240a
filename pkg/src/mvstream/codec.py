"""Block-based inter-frame codec with I/P frames, lossless residuals and a
metadata channel (motion vectors + per-block SAD) exposed at decode time.

Frames are 8-bit luma planes stored as ``numpy.uint8`` arrays of shape
``(height, width)``. Motion vectors follow the convention

    prediction[y, x] = reference[clamp(y + dy), clamp(x + dx)]

i.e. ``(dx, dy)`` points from the current block to its prediction region and
reference samples outside the frame are edge-extended.
"""

from __future__ import annotations

import enum
import io
import math
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator, Sequence

import numpy as np

RAW_MAGIC = b"CSRV"
BITSTREAM_MAGIC = b"CSBS"

_RAW_HEADER = struct.Struct("<4sIIII")
_BS_HEADER = struct.Struct("<4sIIIIHHH")
_BLOCK_HEADER = struct.Struct("<hhB")


class FrameType(str, enum.Enum):
    I = "I"
    P = "P"

    @property
    def code(self) -> int:
        return 0 if self is FrameType.I else 1


class CodecError(ValueError):
    pass


class BitstreamError(CodecError):
    """Malformed container. ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class RawVideo:
    width: int
    height: int
    fps: int
    frames: np.ndarray  # (n, height, width) uint8

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 3:
            raise CodecError("frames must be a (n, height, width) array")
        if self.frames.shape[1:] != (self.height, self.width):
            raise CodecError(
                f"frame shape {self.frames.shape[1:]} does not match "
                f"{self.height}x{self.width}"
            )
        if self.frames.dtype != np.uint8:
            if self.frames.size and (self.frames.min() < 0 or self.frames.max() > 255):
                raise CodecError("sample values must lie in [0, 255]")
            self.frames = self.frames.astype(np.uint8)
        if self.width <= 0 or self.height <= 0 or self.fps <= 0:
            raise CodecError("width, height and fps must be positive")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def raw_bytes(self) -> int:
        return len(self) * self.width * self.height

    def to_bytes(self) -> bytes:
        header = _RAW_HEADER.pack(RAW_MAGIC, self.width, self.height, self.fps, len(self))
        return header + np.ascontiguousarray(self.frames).tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "RawVideo":
        if len(data) < _RAW_HEADER.size:
            raise BitstreamError("truncated raw video header", len(data))
        magic, width, height, fps, count = _RAW_HEADER.unpack_from(data, 0)
        if magic != RAW_MAGIC:
            raise BitstreamError(f"bad magic {magic!r}, expected {RAW_MAGIC!r}", 0)
        body = len(data) - _RAW_HEADER.size
        expected = width * height * count
        if body < expected:
            raise BitstreamError("truncated raw video body", len(data))
        if body > expected:
            raise BitstreamError("trailing bytes after last frame", _RAW_HEADER.size + expected)
        frames = np.frombuffer(data, np.uint8, offset=_RAW_HEADER.size)
        return cls(width, height, fps, frames.reshape(count, height, width).copy())

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "RawVideo":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


@dataclass
class MotionField:
    block_size: int
    vectors: np.ndarray  # (rows, cols, 2) int, last axis (dx, dy)
    sad: np.ndarray  # (rows, cols) int64

    @property
    def shape(self) -> tuple[int, int]:
        return self.sad.shape

    @property
    def dx(self) -> np.ndarray:
        return self.vectors[..., 0]

    @property
    def dy(self) -> np.ndarray:
        return self.vectors[..., 1]

    def magnitudes(self) -> np.ndarray:
        return np.hypot(self.dx, self.dy)

    @classmethod
    def zeros(cls, rows: int, cols: int, block_size: int) -> "MotionField":
        return cls(
            block_size,
            np.zeros((rows, cols, 2), dtype=np.int64),
            np.zeros((rows, cols), dtype=np.int64),
        )


@dataclass
class PFrame:
    motion: MotionField
    residual: np.ndarray  # (padded_h, padded_w) int16


@dataclass
class GopUnit:
    i_frame: np.ndarray  # (height, width) uint8, unpadded
    p_frames: list[PFrame] = field(default_factory=list)

    def __len__(self) -> int:
        return 1 + len(self.p_frames)


@dataclass
class Bitstream:
    width: int
    height: int
    fps: int
    gop_size: int
    block_size: int
    search_radius: int
    gops: list[GopUnit]

    @property
    def frame_count(self) -> int:
        return sum(len(g) for g in self.gops)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        write_bitstream(self, buf)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        reader = _BitstreamReader(data)
        header = reader.header
        gops: list[GopUnit] = []
        for ftype, payload in reader.frames():
            if ftype is FrameType.I:
                gops.append(GopUnit(payload))
            else:
                gops[-1].p_frames.append(payload)
        return cls(gops=gops, **header)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            write_bitstream(self, fh)

    @classmethod
    def load(cls, path) -> "Bitstream":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


@dataclass
class DecodedFrame:
    """One frame leaving the decoder, with its codec metadata attached."""

    index: int
    plane: np.ndarray
    frame_type: FrameType
    gop_index: int
    motion: MotionField | None = None
    residual: np.ndarray | None = None


# --------------------------------------------------------------------------
# Motion estimation / compensation


def padded_dims(height: int, width: int, block_size: int) -> tuple[int, int]:
    return (
        math.ceil(height / block_size) * block_size,
        math.ceil(width / block_size) * block_size,
    )


def pad_frame(plane: np.ndarray, block_size: int) -> np.ndarray:
    """Edge-replicate ``plane`` up to the next multiple of ``block_size``."""
    h, w = plane.shape
    ph, pw = padded_dims(h, w, block_size)
    if (ph, pw) == (h, w):
        return plane
    return np.pad(plane, ((0, ph - h), (0, pw - w)), mode="edge")


def motion_magnitude(mv) -> float:
    dx, dy = mv
    return math.hypot(dx, dy)


def candidate_offsets(search_radius: int) -> list[tuple[int, int]]:
    """All ``(dx, dy)`` in the search window, in tie-break order.

    Smaller magnitude wins; equal magnitudes fall back to row-major scan
    order (dy first, then dx).
    """
    r = search_radius
    offs = [(dx, dy) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]
    return sorted(offs, key=lambda o: (o[0] ** 2 + o[1] ** 2, o[1], o[0]))


def _block_sums(a: np.ndarray, block_size: int) -> np.ndarray:
    h, w = a.shape
    b = block_size
    return a.reshape(h // b, b, w // b, b).sum(axis=(1, 3))


def _check_pair(current: np.ndarray, reference: np.ndarray, block_size: int) -> None:
    if current.shape != reference.shape:
        raise CodecError(f"dimension mismatch: {current.shape} vs {reference.shape}")
    if block_size <= 0:
        raise CodecError("block_size must be positive")
    h, w = current.shape
    if h % block_size or w % block_size:
        raise CodecError(f"block_size {block_size} does not divide frame {h}x{w}")


def estimate_motion(
    current: np.ndarray, reference: np.ndarray, block_size: int, search_radius: int
) -> MotionField:
    """Full-search integer-pel block matching minimising SAD."""
    current = np.asarray(current)
    reference = np.asarray(reference)
    _check_pair(current, reference, block_size)
    if search_radius < 0:
        raise CodecError("search_radius must be >= 0")
    r = search_radius
    h, w = current.shape
    cur = current.astype(np.int32)
    ref = np.pad(reference.astype(np.int32), r, mode="edge")

    offsets = candidate_offsets(r)
    sads = np.empty((len(offsets), h // block_size, w // block_size), dtype=np.int64)
    for k, (dx, dy) in enumerate(offsets):
        shifted = ref[r + dy : r + dy + h, r + dx : r + dx + w]
        sads[k] = _block_sums(np.abs(cur - shifted), block_size)
    # argmin returns the first minimum, which is the tie-break winner
    best = sads.argmin(axis=0)
    vectors = np.asarray(offsets, dtype=np.int64)[best]
    sad = np.take_along_axis(sads, best[None], axis=0)[0]
    return MotionField(block_size, vectors, sad)


def motion_compensate(reference: np.ndarray, field: MotionField) -> np.ndarray:
    """Build the motion-compensated prediction of a frame from ``reference``."""
    h, w = reference.shape
    b = field.block_size
    rows, cols = field.shape
    if (rows * b, cols * b) != (h, w):
        raise CodecError(f"motion field {rows}x{cols}@{b} does not cover frame {h}x{w}")
    dx = np.repeat(np.repeat(field.dx, b, axis=0), b, axis=1)
    dy = np.repeat(np.repeat(field.dy, b, axis=0), b, axis=1)
    ys = np.clip(np.arange(h)[:, None] + dy, 0, h - 1)
    xs = np.clip(np.arange(w)[None, :] + dx, 0, w - 1)
    return reference[ys, xs]


def compute_residual(current: np.ndarray, reference: np.ndarray, field: MotionField) -> np.ndarray:
    current = np.asarray(current)
    reference = np.asarray(reference)
    if current.shape != reference.shape:
        raise CodecError(f"dimension mismatch: {current.shape} vs {reference.shape}")
    pred = motion_compensate(reference, field)
    return (current.astype(np.int16) - pred.astype(np.int16)).astype(np.int16)


def reconstruct(prediction: np.ndarray, residual: np.ndarray) -> np.ndarray:
    out = prediction.astype(np.int16) + residual
    if out.min(initial=0) < 0 or out.max(initial=0) > 255:
        raise CodecError("reconstruction out of 8-bit range")
    return out.astype(np.uint8)


# --------------------------------------------------------------------------
# Encode / decode


def encode(video: RawVideo, gop_size: int, block_size: int = 8, search_radius: int = 4) -> Bitstream:
    if len(video) == 0:
        raise CodecError("cannot encode an empty video")
    if gop_size < 1:
        raise CodecError("gop_size must be >= 1")
    if block_size < 1 or search_radius < 0:
        raise CodecError("block_size must be >= 1 and search_radius >= 0")

    gops: list[GopUnit] = []
    reference = None
    for t, plane in enumerate(video.frames):
        if t % gop_size == 0:
            gops.append(GopUnit(plane.copy()))
        else:
            cur = pad_frame(plane, block_size)
            mf = estimate_motion(cur, reference, block_size, search_radius)
            gops[-1].p_frames.append(PFrame(mf, compute_residual(cur, reference, mf)))
        # lossless: the reconstruction equals the padded source
        reference = pad_frame(plane, block_size)
    return Bitstream(
        video.width, video.height, video.fps, gop_size, block_size, search_radius, gops
    )


def _iter_payloads(data) -> tuple[dict, Iterator[tuple[FrameType, object]]]:
    if isinstance(data, Bitstream):
        header = dict(
            width=data.width, height=data.height, fps=data.fps, gop_size=data.gop_size,
            block_size=data.block_size, search_radius=data.search_radius,
        )

        def gen():
            for gop in data.gops:
                yield FrameType.I, gop.i_frame
                for p in gop.p_frames:
                    yield FrameType.P, p

        return header, gen()
    reader = _BitstreamReader(bytes(data))
    return reader.header, reader.frames()


def decode(data: "Bitstream | bytes") -> Iterator[DecodedFrame]:
    """Single-pass decode. Yields every frame exactly once, in order.

    P-frames carry their motion field and residual plane; I-frames carry no
    motion metadata.
    """
    header, payloads = _iter_payloads(data)
    h, w, b = header["height"], header["width"], header["block_size"]
    reference = None
    gop_index = -1
    for index, (ftype, payload) in enumerate(payloads):
        if ftype is FrameType.I:
            gop_index += 1
            plane = np.asarray(payload, dtype=np.uint8)
            reference = pad_frame(plane, b)
            yield DecodedFrame(index, plane, ftype, gop_index)
        else:
            if reference is None:
                raise CodecError("stream starts with a P-frame")
            pred = motion_compensate(reference, payload.motion)
            full = reconstruct(pred, payload.residual)
            reference = full
            yield DecodedFrame(
                index, full[:h, :w].copy(), ftype, gop_index, payload.motion, payload.residual
            )


def decode_video(data: "Bitstream | bytes") -> RawVideo:
    header, _ = _iter_payloads(data)
    frames = [f.plane for f in decode(data)]
    return RawVideo(header["width"], header["height"], header["fps"], np.stack(frames))


# --------------------------------------------------------------------------
# Container format
#
# header: "CSBS" u32 width u32 height u32 fps u32 frame_count
#         u16 gop_size u16 block_size u16 search_radius
# frame:  u8 type (0=I, 1=P)
#   I:    width*height bytes
#   P:    per block, row-major: i16 dx, i16 dy, u8 coded,
#         then block_size^2 i16 residual samples if coded == 1


def write_bitstream(bs: Bitstream, fh: BinaryIO) -> None:
    fh.write(
        _BS_HEADER.pack(
            BITSTREAM_MAGIC, bs.width, bs.height, bs.fps, bs.frame_count,
            bs.gop_size, bs.block_size, bs.search_radius,
        )
    )
    b = bs.block_size
    for gop in bs.gops:
        fh.write(bytes([FrameType.I.code]))
        fh.write(np.ascontiguousarray(gop.i_frame, dtype=np.uint8).tobytes())
        for p in gop.p_frames:
            fh.write(bytes([FrameType.P.code]))
            rows, cols = p.motion.shape
            res = p.residual.astype("<i2").reshape(rows, b, cols, b).swapaxes(1, 2)
            coded = res.any(axis=(2, 3))
            for r in range(rows):
                for c in range(cols):
                    dx, dy = p.motion.vectors[r, c]
                    fh.write(_BLOCK_HEADER.pack(int(dx), int(dy), int(coded[r, c])))
                    if coded[r, c]:
                        fh.write(res[r, c].tobytes())


class _BitstreamReader:
    def __init__(self, data: bytes):
        self.data = data
        if len(data) < 4 or data[:4] != BITSTREAM_MAGIC:
            raise BitstreamError(f"bad magic {bytes(data[:4])!r}, expected {BITSTREAM_MAGIC!r}", 0)
        if len(data) < _BS_HEADER.size:
            raise BitstreamError("truncated header", len(data))
        _, width, height, fps, count, gop, block, radius = _BS_HEADER.unpack_from(data, 0)
        if width == 0 or height == 0 or block == 0:
            raise BitstreamError("zero width, height or block_size in header", 4)
        self.frame_count = count
        self.header = dict(
            width=width, height=height, fps=fps, gop_size=gop,
            block_size=block, search_radius=radius,
        )
        self.pos = _BS_HEADER.size

    def _take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise BitstreamError(f"truncated stream while reading {what}", len(self.data))
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def frames(self) -> Iterator[tuple[FrameType, object]]:
        h, w = self.header["height"], self.header["width"]
        b = self.header["block_size"]
        ph, pw = padded_dims(h, w, b)
        rows, cols = ph // b, pw // b
        for index in range(self.frame_count):
            start = self.pos
            code = self._take(1, f"frame {index} type")[0]
            if code == 0:
                plane = np.frombuffer(self._take(w * h, f"I-frame {index}"), np.uint8)
                yield FrameType.I, plane.reshape(h, w).copy()
            elif code == 1:
                if index == 0:
                    raise BitstreamError("first frame must be an I-frame", start)
                vectors = np.zeros((rows, cols, 2), dtype=np.int64)
                res = np.zeros((rows, cols, b, b), dtype=np.int16)
                nbytes = 2 * b * b
                for r in range(rows):
                    for c in range(cols):
                        dx, dy, coded = _BLOCK_HEADER.unpack(self._take(_BLOCK_HEADER.size, "block header"))
                        vectors[r, c] = dx, dy
                        if coded == 1:
                            res[r, c] = np.frombuffer(self._take(nbytes, "residual block"), "<i2").reshape(b, b)
                        elif coded != 0:
                            raise BitstreamError(f"invalid block coded flag {coded}", self.pos - 1)
                residual = res.swapaxes(1, 2).reshape(ph, pw)
                sad = np.abs(res.astype(np.int64)).sum(axis=(2, 3))
                yield FrameType.P, PFrame(MotionField(b, vectors, sad), residual)
            else:
                raise BitstreamError(f"unknown frame type {code}", start)
        if self.pos != len(self.data):
            raise BitstreamError(
                f"header declares {self.frame_count} frames but {len(self.data) - self.pos} "
                "bytes remain after the last one",
                self.pos,
            )


def read_header(data: bytes) -> dict:
    """Parse and validate only the fixed-size container header."""
    return _BitstreamReader(bytes(data[: _BS_HEADER.size])).header


def stream_size(bs: Bitstream) -> int:
    return len(bs.to_bytes())


def video_from_frames(frames: Sequence[np.ndarray], fps: int = 2) -> RawVideo:
    arr = np.stack([np.asarray(f, dtype=np.uint8) for f in frames])
    return RawVideo(arr.shape[2], arr.shape[1], fps, arr)
