import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvstream.encoder import (
    EncoderConfig,
    EncoderError,
    PatchEmbeddings,
    TokenOrigin,
    VisionEncoder,
    encode_frame,
    encode_selected,
    patchify,
    project_downsample,
)
from mvstream.motion import PatchGridSpec, expand_group_complete


def random_groups(rng, spec, p=0.5):
    active = rng.random(spec.shape) < p
    return expand_group_complete(active, spec)


def test_patchify_matches_index_oracle(rng):
    spec = PatchGridSpec(4, 3, 5, group_size=1)
    frame = rng.integers(0, 256, spec.frame_shape, dtype=np.uint8)
    patches = patchify(frame, spec)
    for i in range(3):
        for j in range(5):
            k = i * 5 + j
            expected = [frame[i * 4 + y, j * 4 + x] / 255.0 for y in range(4) for x in range(4)]
            np.testing.assert_array_equal(patches[k], expected)


def test_patchify_shape_check():
    with pytest.raises(EncoderError):
        patchify(np.zeros((10, 16), np.uint8), PatchGridSpec(8, 2, 2))


def test_encoder_is_deterministic_and_frozen():
    a, b = VisionEncoder(EncoderConfig(seed=3)), VisionEncoder(EncoderConfig(seed=3))
    np.testing.assert_array_equal(a.proj, b.proj)
    with pytest.raises(ValueError):
        a.w1[0, 0] = 1.0


@pytest.mark.parametrize("p", [0.0, 0.2, 0.7, 1.0])
def test_pruned_tokens_equal_full_compute(rng, p):
    cfg = EncoderConfig(patch_size=4, embed_dim=16, token_dim=12)
    enc = VisionEncoder(cfg)
    spec = PatchGridSpec(4, 6, 8)
    frame = rng.integers(0, 256, spec.frame_shape, dtype=np.uint8)
    groups, patches = random_groups(rng, spec, p)
    full, n_full = encode_frame(frame, np.ones(spec.shape, bool), np.ones(spec.group_shape, bool), enc, spec)
    pruned, n = encode_frame(frame, patches, groups, enc, spec)
    assert n_full == spec.n_patches and n == patches.sum()
    by_origin = {t.origin: t.vector for t in full}
    assert len(pruned) == groups.sum()
    for t in pruned:
        ref = by_origin[t.origin]
        assert np.linalg.norm(t.vector - ref) <= 1e-6 * np.linalg.norm(ref)


def test_token_order_is_row_major():
    spec = PatchGridSpec(4, 4, 4)
    enc = VisionEncoder(EncoderConfig(patch_size=4))
    groups = np.array([[False, True], [True, True]])
    _, patches = expand_group_complete(np.kron(groups, np.ones((2, 2), bool)), spec)
    tokens, _ = encode_frame(np.zeros(spec.frame_shape, np.uint8), patches, groups, enc, spec, frame_index=5)
    assert [t.origin for t in tokens] == [TokenOrigin(5, 1), TokenOrigin(5, 2), TokenOrigin(5, 3)]


def test_projection_concat_order(rng):
    cfg = EncoderConfig(patch_size=4, embed_dim=3, token_dim=2)
    enc = VisionEncoder(cfg)
    spec = PatchGridSpec(4, 2, 2)
    values = rng.standard_normal((2, 2, 3))
    emb = PatchEmbeddings(values, np.ones((2, 2), bool), 4)
    (tok,) = project_downsample(emb, np.ones((1, 1), bool), enc, spec)
    concat = np.concatenate([values[0, 0], values[0, 1], values[1, 0], values[1, 1]])
    np.testing.assert_allclose(tok.vector, concat @ enc.proj)


def test_non_group_complete_mask_rejected():
    spec = PatchGridSpec(4, 2, 2)
    enc = VisionEncoder(EncoderConfig(patch_size=4))
    mask = np.zeros((2, 2), bool)
    mask[0, 0] = True
    with pytest.raises(EncoderError, match="group-complete"):
        encode_selected(patchify(np.zeros((8, 8), np.uint8), spec), mask, enc, spec)


def test_absent_member_rejected(rng):
    spec = PatchGridSpec(4, 2, 2)
    enc = VisionEncoder(EncoderConfig(patch_size=4))
    emb = encode_selected(patchify(np.zeros((8, 8), np.uint8), spec), np.zeros((2, 2), bool), enc, spec)
    with pytest.raises(EncoderError, match="absent"):
        project_downsample(emb, np.ones((1, 1), bool), enc, spec)


def test_empty_mask_gives_no_tokens():
    spec = PatchGridSpec(4, 2, 2)
    enc = VisionEncoder(EncoderConfig(patch_size=4))
    tokens, n = encode_frame(np.zeros((8, 8), np.uint8), np.zeros((2, 2), bool), np.zeros((1, 1), bool), enc, spec)
    assert tokens == [] and n == 0


def test_cross_attention_breaks_exactness(rng):
    cfg = EncoderConfig(patch_size=4, cross_attention=True)
    enc = VisionEncoder(cfg)
    spec = PatchGridSpec(4, 4, 4)
    frame = rng.integers(0, 256, spec.frame_shape, dtype=np.uint8)
    full, _ = encode_frame(frame, np.ones((4, 4), bool), np.ones((2, 2), bool), enc, spec)
    groups = np.array([[True, False], [False, False]])
    _, patches = expand_group_complete(np.kron(groups, np.ones((2, 2), bool)), spec)
    pruned, _ = encode_frame(frame, patches, groups, enc, spec)
    assert not np.allclose(pruned[0].vector, full[0].vector, rtol=1e-6, atol=0)


def test_448_frame_token_count():
    spec = PatchGridSpec.for_frame(448, 448, 14, 2)
    enc = VisionEncoder(EncoderConfig(patch_size=14, embed_dim=8, token_dim=8))
    tokens, n = encode_frame(
        np.zeros((448, 448), np.uint8), np.ones(spec.shape, bool), np.ones(spec.group_shape, bool), enc, spec
    )
    assert n == 1024 and len(tokens) == 256
    assert 80 * len(tokens) == 20480


def test_macs():
    cfg = EncoderConfig(patch_size=8, embed_dim=32, token_dim=32)
    assert cfg.patch_macs == 64 * 32 + 32 * 32
    assert cfg.projection_macs == 4 * 32 * 32


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), g=st.sampled_from([1, 2]))
def test_pruning_soundness_property(seed, g):
    rng = np.random.default_rng(seed)
    spec = PatchGridSpec(4, 4, 4, group_size=g)
    enc = VisionEncoder(EncoderConfig(patch_size=4, embed_dim=8, token_dim=8, group_size=g, seed=seed))
    frame = rng.integers(0, 256, spec.frame_shape, dtype=np.uint8)
    groups, patches = random_groups(rng, spec)
    full, _ = encode_frame(frame, np.ones(spec.shape, bool), np.ones(spec.group_shape, bool), enc, spec)
    pruned, _ = encode_frame(frame, patches, groups, enc, spec)
    ref = {t.origin: t.vector for t in full}
    for t in pruned:
        np.testing.assert_allclose(t.vector, ref[t.origin], rtol=1e-6, atol=1e-12)
