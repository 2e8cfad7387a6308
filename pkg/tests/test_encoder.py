import numpy as np
import pytest

from transducer_lab import tensor as tl
from transducer_lab.encoder import (AttentionMask, ConformerBlock, Encoder,
                                    EncoderConfig, masked_attention)
from transducer_lab.errors import ConfigError, DimensionError


def small_config(**kw):
    base = dict(layers=1, dim=8, heads=2, ff_dim=12, conv_kernel=3,
                subsample=2, feature_dim=4)
    base.update(kw)
    return EncoderConfig(**base)


class TestAttentionMask:
    def test_band_structure(self):
        m = AttentionMask(left=1, right=2).band_matrix(5)
        for i in range(5):
            for l in range(5):
                assert m[i, l] == (1.0 if -1 <= l - i <= 2 else 0.0)

    def test_unbounded(self):
        np.testing.assert_array_equal(AttentionMask().band_matrix(4),
                                      np.ones((4, 4)))

    def test_diagonal_always_unmasked(self):
        m = AttentionMask(left=0, right=0).band_matrix(6)
        np.testing.assert_array_equal(m, np.eye(6))

    def test_negative_context_rejected(self):
        with pytest.raises(ConfigError):
            AttentionMask(left=-1)


class TestMaskedAttention:
    def _qkv(self, rng, L=4, dk=3):
        return (tl.constant(rng.normal(size=(L, dk))),
                tl.constant(rng.normal(size=(L, dk))),
                tl.constant(rng.normal(size=(L, dk))))

    def test_all_ones_equals_dense(self):
        rng = np.random.default_rng(0)
        q, k, v = self._qkv(rng)
        out = masked_attention(q, k, v, np.ones((4, 4))).value
        scores = q.value @ k.value.T / np.sqrt(3)
        e = np.exp(scores - scores.max(axis=-1, keepdims=True))
        dense = (e / e.sum(axis=-1, keepdims=True)) @ v.value
        np.testing.assert_allclose(out, dense, atol=1e-12)

    def test_diagonal_mask_returns_values(self):
        rng = np.random.default_rng(1)
        q, k, v = self._qkv(rng)
        out = masked_attention(q, k, v, np.eye(4)).value
        np.testing.assert_array_equal(out, v.value)

    def test_band_equals_neg_inf_oracle(self):
        rng = np.random.default_rng(2)
        q, k, v = self._qkv(rng)
        mask = AttentionMask(left=1, right=1).band_matrix(4)
        out = masked_attention(q, k, v, mask).value
        scores = q.value @ k.value.T / np.sqrt(3)
        scores = scores + np.where(mask > 0, 0.0, -np.inf)
        e = np.exp(scores - scores.max(axis=-1, keepdims=True))
        oracle = (e / e.sum(axis=-1, keepdims=True)) @ v.value
        np.testing.assert_allclose(out, oracle, atol=1e-10)

    def test_fully_masked_row_rejected(self):
        rng = np.random.default_rng(3)
        q, k, v = self._qkv(rng)
        mask = np.ones((4, 4))
        mask[2, :] = 0.0
        with pytest.raises(DimensionError):
            masked_attention(q, k, v, mask)


class TestConformerBlock:
    def test_gradient_vs_fd(self):
        from transducer_lab.gradcheck import fd_gradient, relative_error
        rng = np.random.default_rng(4)
        cfg = small_config()
        block = ConformerBlock(rng, cfg, AttentionMask(), 0)
        x0 = rng.normal(size=(2, 8))
        w = rng.normal(size=(2, 8))

        leaf = tl.constant(x0)
        tl.backward(tl.sum_all(tl.mul(block(leaf), tl.constant(w))))
        num = fd_gradient(
            lambda x: float((block(tl.constant(x)).value * w).sum()), x0.copy())
        errs = np.vectorize(relative_error)(leaf.grad, num)
        assert errs.max() < 1e-4

    def test_causal_block_ignores_future(self):
        rng = np.random.default_rng(5)
        cfg = small_config()
        block = ConformerBlock(rng, cfg, AttentionMask(left=None, right=0), 0)
        x = rng.normal(size=(6, 8))
        base = block(tl.constant(x)).value
        x2 = x.copy()
        x2[4] += 0.5
        out = block(tl.constant(x2)).value
        np.testing.assert_allclose(out[:4], base[:4], atol=1e-12)


class TestSubsample:
    @pytest.mark.parametrize("t_raw,factor,expect", [(8, 4, 2), (9, 4, 3),
                                                     (8, 2, 4), (2, 4, 1)])
    def test_output_length(self, t_raw, factor, expect):
        rng = np.random.default_rng(6)
        enc = Encoder(small_config(subsample=factor), rng)
        out = enc.frontend(tl.constant(rng.normal(size=(t_raw, 4))))
        assert out.shape[0] == expect

    def test_gradient_through_frontend(self):
        from transducer_lab.gradcheck import fd_gradient, relative_error
        rng = np.random.default_rng(7)
        enc = Encoder(small_config(subsample=4), rng)
        x0 = rng.normal(size=(8, 4))
        w = rng.normal(size=(2, 8))
        leaf = tl.constant(x0)
        tl.backward(tl.sum_all(tl.mul(enc.frontend(leaf), tl.constant(w))))
        num = fd_gradient(
            lambda x: float((enc.frontend(tl.constant(x)).value * w).sum()),
            x0.copy())
        errs = np.vectorize(relative_error)(leaf.grad, num)
        assert errs.max() < 1e-4


class TestEncode:
    def test_streaming_latency_bound(self):
        # right_context=0 everywhere: output frame t reads raw frames <= 4t+3
        rng = np.random.default_rng(8)
        cfg = EncoderConfig(layers=2, dim=8, heads=2, ff_dim=12, conv_kernel=3,
                            subsample=4, feature_dim=4, mask_right=0)
        enc = Encoder(cfg, rng)
        x = rng.normal(size=(16, 4))
        base = enc.encode(x).value
        for t in range(base.shape[0] - 1):
            horizon = 4 * t + 3
            for probe in range(horizon + 1, 16, 3):
                x2 = x.copy()
                x2[probe] += 1.0
                out = enc.encode(x2).value
                np.testing.assert_allclose(out[:t + 1], base[:t + 1],
                                           atol=1e-12)

    def test_streaming_preset_layout_accepted(self):
        # first layers small right context, later layers fully causal
        cfg = EncoderConfig(layers=4, dim=8, heads=2, ff_dim=12, conv_kernel=3,
                            subsample=2, feature_dim=4,
                            mask_right=[1, 1, 0, 0], mask_left=[4, 4, 4, 4])
        enc = Encoder(cfg, np.random.default_rng(9))
        out = enc.encode(np.random.default_rng(10).normal(size=(10, 4)))
        assert np.all(np.isfinite(out.value))

    def test_diagonal_only_config_finite(self):
        cfg = small_config(layers=2)
        cfg.mask_left = 0
        cfg.mask_right = 0
        enc = Encoder(cfg, np.random.default_rng(11))
        out = enc.encode(np.random.default_rng(12).normal(size=(8, 4)))
        assert np.all(np.isfinite(out.value))

    def test_receptive_field_bound(self):
        # non-causal layers add their mask right context plus the centered
        # conv half-width per layer (post-subsampling frames)
        rng = np.random.default_rng(13)
        cfg = EncoderConfig(layers=2, dim=8, heads=2, ff_dim=12, conv_kernel=3,
                            subsample=2, feature_dim=4,
                            mask_left=2, mask_right=1)
        enc = Encoder(cfg, rng)
        x = rng.normal(size=(20, 4))
        base = enc.encode(x).value
        future_per_layer = 1 + cfg.conv_kernel // 2
        total_future = cfg.layers * future_per_layer
        t = 2
        # raw-frame horizon: subsampled frame t+total_future maps back through
        # the stride-2 stages (each with centered kernel 3)
        raw_horizon = 2 * (t + total_future) + 3
        for probe in range(raw_horizon + 1, 20):
            x2 = x.copy()
            x2[probe] += 1.0
            out = enc.encode(x2).value
            np.testing.assert_allclose(out[t], base[t], atol=1e-12)

    def test_full_encoder_gradient(self):
        from transducer_lab.gradcheck import fd_gradient, relative_error
        rng = np.random.default_rng(14)
        enc = Encoder(small_config(layers=2), rng)
        x0 = rng.normal(size=(6, 4))
        w = rng.normal(size=(3, 8))
        leaf = tl.constant(x0)
        tl.backward(tl.sum_all(tl.mul(enc.encode(leaf), tl.constant(w))))
        num = fd_gradient(
            lambda x: float((enc.encode(x).value * w).sum()), x0.copy())
        errs = np.vectorize(relative_error)(leaf.grad, num)
        assert errs.max() < 1e-4

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            small_config(dim=9)     # not divisible by heads
        with pytest.raises(ConfigError):
            small_config(conv_kernel=4)
