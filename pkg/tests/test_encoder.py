import numpy as np
import pytest

from fastnlu.encoder import (
    EncoderConfig,
    encode,
    encode_backward,
    encoder_param_count,
    encoder_param_shapes,
    init_encoder_params,
)
from fastnlu.errors import ConfigError, DataError
from fastnlu.rng import Rng
from gradcheck import max_rel_err, numeric_grad


def tiny_config(**kw):
    base = dict(vocab_size=12, d_model=8, num_blocks=1, num_heads=2,
                ffn_dim=16, max_positions=10, dropout_p=0.0)
    base.update(kw)
    return EncoderConfig(**base)


def frame(rows, width):
    """Rows of token ids -> padded (ids, mask) arrays."""
    ids = np.zeros((len(rows), width), dtype=np.int64)
    mask = np.zeros_like(ids)
    for b, r in enumerate(rows):
        ids[b, : len(r)] = r
        mask[b, : len(r)] = 1
    return ids, mask


class TestConfig:
    def test_tiny_shape_valid(self):
        cfg = EncoderConfig(vocab_size=100, d_model=312, num_blocks=4, num_heads=12)
        assert cfg.ffn_dim == 4 * 312

    def test_heads_must_divide(self):
        with pytest.raises(ConfigError, match="sixteen|16"):
            EncoderConfig(vocab_size=100, d_model=312, num_heads=16)

    def test_bad_activation(self):
        with pytest.raises(ConfigError):
            tiny_config(activation="swish")

    def test_bad_dropout(self):
        with pytest.raises(ConfigError):
            tiny_config(dropout_p=1.0)

    def test_vocab_too_small(self):
        with pytest.raises(ConfigError):
            tiny_config(vocab_size=3)


class TestParamCount:
    NAMED_SHAPES = [
        (4, 312, 12),   # Tiny
        (6, 768, 12),   # Distil-like
        (12, 768, 12),  # BERT-like
    ]

    @pytest.mark.parametrize("blocks,d,heads", NAMED_SHAPES)
    def test_formula_matches_layout(self, blocks, d, heads):
        cfg = EncoderConfig(vocab_size=1000, d_model=d, num_blocks=blocks,
                            num_heads=heads)
        total = sum(int(np.prod(shape)) for _, shape, _ in encoder_param_shapes(cfg))
        assert total == encoder_param_count(cfg)

    def test_formula_matches_materialized_params(self):
        cfg = tiny_config()
        params = init_encoder_params(cfg, Rng(1))
        assert sum(t.size for t in params.values()) == encoder_param_count(cfg)
        assert set(params) == {name for name, _, _ in encoder_param_shapes(cfg)}


class TestInit:
    def test_same_seed_bit_identical(self):
        cfg = tiny_config()
        a = init_encoder_params(cfg, Rng(7))
        b = init_encoder_params(cfg, Rng(7))
        for name in a:
            assert np.array_equal(a[name].data, b[name].data), name

    def test_init_values(self):
        cfg = tiny_config(num_blocks=2)
        params = init_encoder_params(cfg, Rng(3))
        assert np.all(params["enc.0.attn.bq"].data == 0)
        assert np.all(params["enc.1.ln2.g"].data == 1)
        w = params["enc.0.attn.wq"].data
        assert np.abs(w).max() <= 2 * 0.02 + 1e-8
        assert w.std() > 0


class TestEncode:
    def test_output_shape(self):
        cfg = EncoderConfig(vocab_size=10, d_model=312, num_blocks=1,
                            num_heads=12, max_positions=10, dropout_p=0.0)
        params = init_encoder_params(cfg, Rng(1))
        ids, mask = frame([[2, 4, 5, 6, 7, 3], [2, 4, 5, 3]], 6)
        h, _ = encode(params, cfg, ids, mask)
        assert h.shape == (2, 6, 312)

    def test_identical_rows_encode_identically(self):
        cfg = tiny_config()
        params = init_encoder_params(cfg, Rng(2))
        ids, mask = frame([[2, 5, 6, 3], [2, 5, 6, 3]], 5)
        h, _ = encode(params, cfg, ids, mask)
        assert np.array_equal(h[0], h[1])

    def test_padding_invariance(self):
        cfg = tiny_config(num_blocks=2)
        params = init_encoder_params(cfg, Rng(9))
        rows = [[2, 5, 6, 7, 3], [2, 8, 3]]
        ids_a, mask_a = frame(rows, 5)
        ids_b, mask_b = frame(rows, 8)
        ha, _ = encode(params, cfg, ids_a, mask_a)
        hb, _ = encode(params, cfg, ids_b, mask_b)
        for b, row in enumerate(rows):
            np.testing.assert_allclose(ha[b, : len(row)], hb[b, : len(row)],
                                       rtol=0, atol=1e-5)

    def test_width_overflow(self):
        cfg = tiny_config()
        params = init_encoder_params(cfg, Rng(1))
        ids, mask = frame([[2, 5, 3]], cfg.max_positions + 1)
        with pytest.raises(DataError, match="max_positions"):
            encode(params, cfg, ids, mask)

    def test_id_out_of_range(self):
        cfg = tiny_config()
        params = init_encoder_params(cfg, Rng(1))
        ids, mask = frame([[2, cfg.vocab_size, 3]], 3)
        with pytest.raises(DataError, match="vocab"):
            encode(params, cfg, ids, mask)

    def test_training_dropout_reproducible_and_active(self):
        cfg = tiny_config(dropout_p=0.2)
        params = init_encoder_params(cfg, Rng(4))
        ids, mask = frame([[2, 5, 6, 3]], 4)
        h1, _ = encode(params, cfg, ids, mask, training=True, rng=Rng(11))
        h2, _ = encode(params, cfg, ids, mask, training=True, rng=Rng(11))
        h3, _ = encode(params, cfg, ids, mask)
        assert np.array_equal(h1, h2)
        assert not np.allclose(h1, h3)


class TestEncodeGrad:
    def setup_case(self, activation="relu"):
        cfg = tiny_config(activation=activation)
        params = init_encoder_params(cfg, Rng(21), dtype=np.float64)
        # production init std 0.02 leaves some gradients below the finite
        # difference noise floor; re-randomize to O(0.4) for the check
        rnd = Rng(33)
        for name, t in params.items():
            if name.endswith(".g"):
                t.data = 1.0 + 0.2 * rnd.normal(t.shape)
            else:
                t.data = 0.4 * rnd.normal(t.shape)
        ids, mask = frame([[2, 5, 6, 7, 3], [2, 8, 9, 3]], 5)
        r = Rng(77).normal((2, 5, cfg.d_model))
        return cfg, params, ids, mask, r

    def test_all_params_match_finite_differences(self):
        cfg, params, ids, mask, r = self.setup_case()
        h, cache = encode(params, cfg, ids, mask)
        encode_backward(r, cache, params, cfg)

        def loss():
            out, _ = encode(params, cfg, ids, mask)
            return float((out * r).sum())

        for name, tensor in params.items():
            num = numeric_grad(loss, tensor.data)
            assert max_rel_err(tensor.grad, num) < 1e-4, name

    def test_gelu_path_matches_finite_differences(self):
        cfg, params, ids, mask, r = self.setup_case(activation="gelu")
        _, cache = encode(params, cfg, ids, mask)
        encode_backward(r, cache, params, cfg)

        def loss():
            out, _ = encode(params, cfg, ids, mask)
            return float((out * r).sum())

        for name in ("enc.0.ffn.w1", "emb.tok", "enc.0.ln1.g"):
            num = numeric_grad(loss, params[name].data)
            assert max_rel_err(params[name].grad, num) < 1e-4, name
