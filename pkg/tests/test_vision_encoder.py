import numpy as np
import pytest

from camp import data
from camp import tensor as T
from camp.tensor import Tensor, backward, finite_diff_grad
from camp.vision_encoder import (
    AttentionPool,
    ConfigError,
    VisionEncoder,
    attention_maps_by_segment,
    head_groups,
    patchify,
    read_pgm,
    to_pgm,
)


def small(seed=0, **kw):
    args = dict(out_dim=96, width=32, n_layers=2, n_heads=4, pool_heads=6, t_max=16)
    args.update(kw)
    return VisionEncoder(np.random.default_rng(seed), **args)


def image(idx=0):
    return data.make_sample(idx).image


def test_patchify_shapes_and_layout():
    img = np.arange(3 * 32 * 32, dtype=np.float32).reshape(3, 32, 32)
    patches = patchify(img, 8)
    assert patches.shape == (16, 192)
    # patch 1 is row 0, columns 8..15; first value is channel 0 pixel (0, 8)
    assert patches[1, 0] == img[0, 0, 8]
    assert patches[1, 1] == img[1, 0, 8]
    assert patches[4, 0] == img[0, 8, 0]
    const = patchify(np.full((3, 32, 32), 0.3), 8)
    assert (const == const[0]).all()
    with pytest.raises(ValueError):
        patchify(img, 7)


def test_config_errors():
    with pytest.raises(ConfigError):
        small(pool_heads=5)
    with pytest.raises(ConfigError):
        small(patch=7)
    with pytest.raises(ConfigError):
        head_groups(96, 6, 5)


def test_encode_image_unit_norm_and_deterministic():
    enc = small()
    imgs = np.stack([image(i) for i in range(4)])
    q, w = enc.encode_images(imgs)
    assert q.shape == (4, 96)
    assert np.abs(np.linalg.norm(q.data, axis=1) - 1).max() < 1e-6
    assert np.abs(w.data.sum(axis=-1) - 1).max() < 1e-6
    assert enc.encode_images(imgs)[0].data.tobytes() == q.data.tobytes()


def test_identical_tokens_pool_uniformly():
    pool = AttentionPool(np.random.default_rng(0), 8, 12, 3)
    tokens = Tensor(np.tile(np.random.default_rng(1).normal(size=8), (1, 5, 1)))
    _, w = pool(tokens)
    np.testing.assert_allclose(w.data, 0.2, atol=1e-7)


def test_single_frame_video_equals_image():
    enc = small(1)
    img = image(5)
    np.testing.assert_array_equal(enc.encode_video(img[None]).data, enc.encode_image(img)[0].data)


@pytest.mark.parametrize("t", [1, 2, 4, 8, 16])
def test_video_shapes(t):
    enc = small(2)
    video = data.make_video(data.ALL_FACTORS[7], t)
    q, w = enc.encode_videos(video[None])
    assert q.shape == (1, 96)
    assert w.shape == (1, 6, t * 16)
    assert abs(np.linalg.norm(q.data) - 1) < 1e-6


def test_too_many_frames():
    enc = small(t_max=4)
    with pytest.raises(ConfigError):
        enc.encode_videos(np.zeros((1, 5, 3, 32, 32), np.float32))


def test_frame_order_matters_with_temporal_offsets():
    enc = small(3)
    video = data.make_video(data.ALL_FACTORS[10], 4, step=2.0)
    before = enc.encode_video(video).data
    # zero offsets make pooling permutation-invariant over tokens
    np.testing.assert_allclose(enc.encode_video(video[::-1]).data, before, atol=1e-6)
    enc.temporal.data[:4, 0, 0] = [0.0, 0.5, 1.0, 1.5]
    a = enc.encode_video(video).data
    b = enc.encode_video(video[::-1]).data
    assert np.abs(a - b).max() > 1e-4


@pytest.mark.parametrize("mode", ["scalar", "channel"])
def test_temporal_gradient_matches_finite_differences(mode):
    enc = small(4, temporal_mode=mode).to(np.float64)
    enc.temporal.data = np.random.default_rng(0).normal(0, 0.3, enc.temporal.shape)
    video = data.make_video(data.ALL_FACTORS[20], 3)[None]
    target = np.random.default_rng(1).normal(size=96)

    def loss(temporal):
        saved = enc.temporal
        enc.temporal = temporal
        try:
            return (enc.encode_videos(video)[0] * target).sum()
        finally:
            enc.temporal = saved

    t = Tensor(enc.temporal.data.copy(), requires_grad=True)
    backward(loss(t))
    fd = finite_diff_grad(loss, t, h=1e-5)
    used = fd[:3]
    assert np.abs(t.grad[:3] - used).max() / np.abs(used).max() < 1e-3
    assert not t.grad[3:].any()


def test_head_groups_mapping():
    assert head_groups(96, 6, 6) == [[0], [1], [2], [3], [4], [5]]
    assert head_groups(96, 6, 3) == [[0, 1], [2, 3], [4, 5]]
    assert head_groups(96, 6, 1) == [[0, 1, 2, 3, 4, 5]]
    assert head_groups(96, 6, 12) == [[h // 2] for h in range(12)]


@pytest.mark.parametrize("K", [1, 2, 3, 6])
def test_attention_maps_are_distributions(K):
    enc = small(5)
    maps = attention_maps_by_segment(image(33), enc, K)
    assert maps.maps.shape == (K, 4, 4)
    assert np.abs(maps.maps.sum(axis=(1, 2)) - 1).max() < 1e-5
    assert len(maps.argmax_patches()) == K


def test_k1_map_is_mean_over_heads():
    enc = small(6)
    img = image(40)
    _, w = enc.encode_image(img)
    maps = attention_maps_by_segment(img, enc, 1)
    np.testing.assert_allclose(maps.maps[0].reshape(-1), w.data.mean(axis=0), rtol=1e-6)


def test_pgm_and_csv_written(tmp_path):
    enc = small(7)
    maps = attention_maps_by_segment(image(50), enc, 6)
    paths = maps.save(tmp_path, "sample")
    assert len(paths) == 12
    csv = np.loadtxt(tmp_path / "sample_seg1.csv", delimiter=",")
    np.testing.assert_array_equal(csv, maps.maps[0])
    pix = read_pgm((tmp_path / "sample_seg1.pgm").read_bytes())
    assert pix.shape == (4, 4) and pix.max() == 255 and pix.min() == 0


def test_pgm_roundtrip_constant_grid():
    grid = np.full((3, 5), 0.2)
    pix = read_pgm(to_pgm(grid))
    assert pix.shape == (3, 5) and not pix.any()
    with pytest.raises(ValueError):
        read_pgm(b"P2\n1 1\n255\n\x00")


def test_vision_forward_is_deterministic_across_instances():
    a, b = small(9), small(9)
    img = np.stack([image(1), image(2)])
    with T.no_grad():
        assert a.encode_images(img)[0].data.tobytes() == b.encode_images(img)[0].data.tobytes()
