import numpy as np
import pytest

from ghcbc.config import desk_vision_config
from ghcbc.errors import ConfigError, DimensionError
from ghcbc.tensor import Tensor
from ghcbc.vision import VisionEncoder, positional_encoding_2d


class TestPositionalEncoding:
    def test_values_bounded(self):
        pe = positional_encoding_2d(8, 9, 16)
        assert np.all(pe >= -1.0) and np.all(pe <= 1.0)

    def test_origin_is_sines_zero_cosines_one(self):
        pe = positional_encoding_2d(4, 4, 8)
        origin = pe[0]
        assert np.allclose(origin[0::2], 0.0)
        assert np.allclose(origin[1::2], 1.0)

    def test_distinct_positions_desk_scale(self):
        cfg = desk_vision_config()
        pe = positional_encoding_2d(cfg.feat_h, cfg.feat_w, cfg.d_model)
        for i in range(len(pe)):
            for j in range(i + 1, len(pe)):
                assert not np.array_equal(pe[i], pe[j])

    def test_distinct_positions_large_grid(self):
        pe = positional_encoding_2d(100, 100, 16)
        assert len(np.unique(pe, axis=0)) == 100 * 100

    def test_d_model_divisibility_guard(self):
        with pytest.raises(ConfigError):
            positional_encoding_2d(3, 4, 30)

    def test_deterministic(self):
        assert np.array_equal(positional_encoding_2d(3, 4, 32),
                              positional_encoding_2d(3, 4, 32))


class TestVisionEncoder:
    def test_desk_output_shape(self, rng):
        cfg = desk_vision_config()
        enc = VisionEncoder(cfg, rng)
        tokens = enc.encode(Tensor(np.zeros((1, 24, 32))))
        assert tokens.shape == (12, 32)

    def test_batched_output_shape(self, rng):
        cfg = desk_vision_config()
        enc = VisionEncoder(cfg, rng)
        tokens = enc.encode(Tensor(np.zeros((5, 1, 24, 32))))
        assert tokens.shape == (5, 12, 32)

    def test_desk_intermediate_shapes(self, rng):
        cfg = desk_vision_config()
        enc = VisionEncoder(cfg, rng)
        inter = []
        enc.encode(Tensor(np.zeros((1, 24, 32))), intermediates=inter)
        assert inter == [(16, 3, 4), (32, 3, 4), (32, 12), (12, 32)]

    def test_deterministic_on_equal_images(self, rng):
        cfg = desk_vision_config()
        enc = VisionEncoder(cfg, rng)
        img = np.random.default_rng(3).random((1, 24, 32))
        a = enc.encode(Tensor(img)).numpy()
        b = enc.encode(Tensor(img.copy())).numpy()
        assert np.array_equal(a, b)

    def test_wrong_image_size(self, rng):
        enc = VisionEncoder(desk_vision_config(), rng)
        with pytest.raises(DimensionError):
            enc.encode(Tensor(np.zeros((1, 24, 30))))

    def test_gradient_reaches_backbone(self, rng):
        from ghcbc.optim import adam_init, adam_step, zero_grads

        cfg = desk_vision_config()
        enc = VisionEncoder(cfg, rng)
        params = enc.named_parameters()
        before = {k: p.data.copy() for k, p in params.items()}
        opt = adam_init(params, lr=1e-2)
        img = Tensor(np.random.default_rng(1).random((1, 24, 32)))
        target = Tensor(np.ones((12, 32)))
        zero_grads(params)
        diff = enc.encode(img) - target
        (diff * diff).mean().backward()
        adam_step(params, opt)
        changed = [k for k in params if not np.array_equal(params[k].data, before[k])
                   and k.startswith("convs.")]
        assert changed, "no backbone parameter changed after a training step"

    def test_batched_matches_single(self, rng):
        cfg = desk_vision_config()
        enc = VisionEncoder(cfg, rng)
        imgs = np.random.default_rng(2).random((3, 1, 24, 32))
        batched = enc.encode(Tensor(imgs)).numpy()
        singles = np.stack([enc.encode(Tensor(im)).numpy() for im in imgs])
        assert np.allclose(batched, singles, atol=1e-12)
