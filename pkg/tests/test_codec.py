import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvstream.codec import (
    Bitstream,
    BitstreamError,
    CodecError,
    FrameType,
    MotionField,
    RawVideo,
    compute_residual,
    decode,
    decode_video,
    encode,
    estimate_motion,
    motion_compensate,
    motion_magnitude,
    reconstruct,
)
from oracles import block_sad, exhaustive_motion


def random_video(rng, n, h, w, fps=2):
    return RawVideo(w, h, fps, rng.integers(0, 256, size=(n, h, w), dtype=np.uint8))


class TestMotionMagnitude:
    @pytest.mark.parametrize("mv,expected", [((0, 0), 0.0), ((3, 4), 5.0), ((-2, 0), 2.0)])
    def test_values(self, mv, expected):
        assert motion_magnitude(mv) == expected


class TestEstimateMotion:
    def test_identical_frames(self, rng):
        f = rng.integers(0, 256, (32, 32), dtype=np.uint8)
        mf = estimate_motion(f, f, 8, 3)
        assert not mf.vectors.any()
        assert not mf.sad.any()

    def test_shift_right_by_two(self, rng):
        ref = rng.integers(0, 256, (32, 32), dtype=np.uint8)
        cur = np.zeros_like(ref)
        cur[:, 2:] = ref[:, :-2]
        cur[:, :2] = ref[:, :1]
        mf = estimate_motion(cur, ref, 8, 3)
        oracle = exhaustive_motion(cur, ref, 8, 3)
        for by in range(4):
            for bx in range(1, 4):  # interior blocks
                assert tuple(mf.vectors[by, bx]) == (-2, 0)
                assert mf.sad[by, bx] == 0
                assert oracle[by, bx] == (-2, 0, 0)

    def test_noise_never_worse_than_zero_motion(self, rng):
        ref = rng.integers(0, 256, (24, 24), dtype=np.uint8)
        cur = rng.integers(0, 256, (24, 24), dtype=np.uint8)
        mf = estimate_motion(cur, ref, 8, 2)
        for by in range(3):
            for bx in range(3):
                assert mf.sad[by, bx] <= block_sad(cur, ref, by, bx, 8, 0, 0)

    def test_matches_exhaustive_oracle(self, rng):
        ref = rng.integers(0, 8, (16, 16), dtype=np.uint8)  # small alphabet forces ties
        cur = rng.integers(0, 8, (16, 16), dtype=np.uint8)
        mf = estimate_motion(cur, ref, 4, 2)
        oracle = exhaustive_motion(cur, ref, 4, 2)
        for (by, bx), (dx, dy, sad) in oracle.items():
            assert (mf.vectors[by, bx, 0], mf.vectors[by, bx, 1], mf.sad[by, bx]) == (dx, dy, sad)

    def test_flat_frame_prefers_zero_vector(self):
        f = np.full((16, 16), 77, np.uint8)
        mf = estimate_motion(f, f, 8, 4)
        assert not mf.vectors.any()

    def test_radius_zero(self, rng):
        a = rng.integers(0, 256, (16, 16), dtype=np.uint8)
        b = rng.integers(0, 256, (16, 16), dtype=np.uint8)
        mf = estimate_motion(a, b, 8, 0)
        assert not mf.vectors.any()

    def test_dimension_mismatch(self):
        with pytest.raises(CodecError):
            estimate_motion(np.zeros((16, 16), np.uint8), np.zeros((16, 8), np.uint8), 8, 1)

    def test_block_size_must_divide(self):
        with pytest.raises(CodecError):
            estimate_motion(np.zeros((12, 12), np.uint8), np.zeros((12, 12), np.uint8), 8, 1)


class TestResidual:
    def test_exact_prediction_gives_zero_residual(self, rng):
        f = rng.integers(0, 256, (16, 16), dtype=np.uint8)
        mf = estimate_motion(f, f, 8, 2)
        assert not compute_residual(f, f, mf).any()

    def test_reconstruction_and_block_sums(self, rng):
        for _ in range(10):
            cur = rng.integers(0, 256, (16, 16), dtype=np.uint8)
            ref = rng.integers(0, 256, (16, 16), dtype=np.uint8)
            mf = estimate_motion(cur, ref, 8, 2)
            res = compute_residual(cur, ref, mf)
            assert res.dtype == np.int16
            np.testing.assert_array_equal(reconstruct(motion_compensate(ref, mf), res), cur)
            for by in range(2):
                for bx in range(2):
                    blk = res[by * 8 : by * 8 + 8, bx * 8 : bx * 8 + 8]
                    assert np.abs(blk.astype(int)).sum() == mf.sad[by, bx]

    def test_arbitrary_field_round_trips(self, rng):
        cur = rng.integers(0, 256, (16, 16), dtype=np.uint8)
        ref = rng.integers(0, 256, (16, 16), dtype=np.uint8)
        vec = rng.integers(-3, 4, (2, 2, 2))
        mf = MotionField(8, vec, np.zeros((2, 2), np.int64))
        res = compute_residual(cur, ref, mf)
        np.testing.assert_array_equal(reconstruct(motion_compensate(ref, mf), res), cur)


class TestEncodeDecode:
    def test_single_frame(self, rng):
        v = random_video(rng, 1, 16, 24)
        bs = encode(v, 16, 8, 2)
        assert len(bs.gops) == 1 and not bs.gops[0].p_frames
        data = bs.to_bytes()
        assert len(data) == 26 + 1 + 16 * 24  # header + frame type + plane

    def test_static_video(self, rng):
        plane = rng.integers(0, 256, (32, 32), dtype=np.uint8)
        v = RawVideo(32, 32, 2, np.stack([plane] * 16))
        bs = encode(v, 16, 8, 4)
        assert len(bs.gops) == 1 and len(bs.gops[0].p_frames) == 15
        for p in bs.gops[0].p_frames:
            assert not p.motion.vectors.any()
            assert not p.residual.any()

    def test_gop_structure(self, rng):
        v = random_video(rng, 10, 16, 16)
        bs = encode(v, 4, 8, 1)
        assert [len(g) for g in bs.gops] == [4, 4, 2]
        types = [f.frame_type for f in decode(bs)]
        assert types == [FrameType.I, FrameType.P, FrameType.P, FrameType.P] * 2 + [FrameType.I, FrameType.P]

    def test_round_trip_bytes(self, rng):
        v = random_video(rng, 7, 20, 27)  # not block multiples
        data = encode(v, 3, 8, 2).to_bytes()
        np.testing.assert_array_equal(decode_video(data).frames, v.frames)
        again = Bitstream.from_bytes(data)
        assert again.to_bytes() == data

    def test_decode_yields_each_frame_once(self, rng):
        v = random_video(rng, 9, 16, 16)
        seen = [f.index for f in decode(encode(v, 4, 8, 1).to_bytes())]
        assert seen == list(range(9))

    def test_p_frames_carry_metadata(self, rng):
        v = random_video(rng, 3, 16, 16)
        frames = list(decode(encode(v, 8, 8, 1)))
        assert frames[0].motion is None
        assert all(isinstance(f.motion, MotionField) for f in frames[1:])

    def test_decoded_sad_matches_encoder(self, rng):
        v = random_video(rng, 4, 16, 16)
        bs = encode(v, 8, 8, 2)
        frames = list(decode(bs.to_bytes()))
        for f, p in zip(frames[1:], bs.gops[0].p_frames):
            np.testing.assert_array_equal(f.motion.sad, p.motion.sad)
            np.testing.assert_array_equal(f.motion.vectors, p.motion.vectors)

    def test_empty_video(self):
        with pytest.raises(CodecError):
            encode(RawVideo(8, 8, 2, np.zeros((0, 8, 8), np.uint8)), 4)

    def test_static_compresses_sublinearly(self, rng):
        plane = rng.integers(0, 256, (32, 32), dtype=np.uint8)
        sizes = []
        for n in (8, 16, 32):
            v = RawVideo(32, 32, 2, np.stack([plane] * n))
            sizes.append(len(encode(v, 64, 8, 2).to_bytes()) / v.raw_bytes)
        assert sizes[0] > sizes[1] > sizes[2]

    @settings(max_examples=25, deadline=None)
    @given(
        n=st.integers(1, 6), h=st.integers(1, 20), w=st.integers(1, 20),
        gop=st.integers(1, 5), block=st.sampled_from([2, 4, 8]), radius=st.integers(0, 2),
        seed=st.integers(0, 2**16),
    )
    def test_round_trip_property(self, n, h, w, gop, block, radius, seed):
        v = random_video(np.random.default_rng(seed), n, h, w)
        out = decode_video(encode(v, gop, block, radius).to_bytes())
        np.testing.assert_array_equal(out.frames, v.frames)


class TestContainerErrors:
    def _data(self, rng):
        return encode(random_video(rng, 3, 16, 16), 2, 8, 1).to_bytes()

    def test_bad_magic(self, rng):
        data = b"XXXX" + self._data(rng)[4:]
        with pytest.raises(BitstreamError) as exc:
            list(decode(data))
        assert exc.value.offset == 0
        assert "offset 0" in str(exc.value)

    def test_truncated(self, rng):
        data = self._data(rng)
        with pytest.raises(BitstreamError) as exc:
            list(decode(data[:-5]))
        assert exc.value.offset == len(data) - 5

    def test_trailing_bytes(self, rng):
        data = self._data(rng)
        with pytest.raises(BitstreamError) as exc:
            list(decode(data + b"\0\0"))
        assert exc.value.offset == len(data)

    def test_frame_count_too_small(self, rng):
        data = bytearray(self._data(rng))
        struct.pack_into("<I", data, 16, 2)
        with pytest.raises(BitstreamError, match="bytes remain"):
            list(decode(bytes(data)))

    def test_unknown_frame_type(self, rng):
        data = bytearray(self._data(rng))
        data[26] = 9
        with pytest.raises(BitstreamError) as exc:
            list(decode(bytes(data)))
        assert exc.value.offset == 26

    def test_raw_video_round_trip_and_errors(self, rng):
        v = random_video(rng, 3, 5, 7, fps=30)
        data = v.to_bytes()
        assert len(data) == 20 + 3 * 35
        back = RawVideo.from_bytes(data)
        assert (back.width, back.height, back.fps) == (7, 5, 30)
        np.testing.assert_array_equal(back.frames, v.frames)
        with pytest.raises(BitstreamError):
            RawVideo.from_bytes(b"CSBS" + data[4:])
        with pytest.raises(BitstreamError):
            RawVideo.from_bytes(data[:-1])
