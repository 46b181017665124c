import numpy as np

from fastnlu.attention import FanConfig, fan_forward, fan_backward, fan_param_count
from fastnlu.data import (
    RESERVED_TOKENS,
    LabelMaps,
    Utterance,
    Vocab,
    encode_batch,
)
from fastnlu.decoder import joint_loss, joint_loss_backward
from fastnlu.encoder import EncoderConfig, encode, encoder_param_count
from fastnlu.model import Model
from fastnlu.rng import Rng
from fastnlu.tensor import Tensor
from gradcheck import max_rel_err, numeric_grad

WORDS = ("find", "fish", "story", "play", "rain", "in", "paris")


def tiny_world(dtype=np.float64, **fan_kw):
    token_to_id = {t: i for i, t in enumerate(RESERVED_TOKENS)}
    for w in WORDS:
        token_to_id[w] = len(token_to_id)
    vocab = Vocab(token_to_id, min_freq=1)
    labels = LabelMaps(
        intent_to_id={"A": 0, "B": 1, "C": 2},
        slot_to_id={"O": 0, "B-x": 1, "I-x": 2, "B-y": 3, "I-y": 4},
    )
    enc = EncoderConfig(vocab_size=len(vocab), d_model=8, num_blocks=1,
                        num_heads=2, ffn_dim=16, max_positions=12, dropout_p=0.0)
    fan = FanConfig(heads=2, dropout_p=0.0, **fan_kw)
    model = Model.build(enc, fan, vocab, labels, seed=11, dtype=dtype)
    utts = [
        Utterance(("find", "fish", "story", "rain", "paris"), "A",
                  ("O", "B-x", "I-x", "O", "B-y")),
        Utterance(("play", "rain"), "B", ("B-y", "O")),
    ]
    batch = encode_batch(utts, vocab, labels, max_len=50)
    return model, batch


def randomize(model, seed=55):
    """Lift parameter magnitudes above the finite-difference noise floor."""
    rng = Rng(seed)
    for name, t in model.params.items():
        if name.endswith(".g"):
            t.data = (1.0 + 0.2 * rng.normal(t.shape)).astype(t.dtype)
        else:
            t.data = rng.normal(t.shape, std=0.4).astype(t.dtype)


class TestAssembly:
    def test_param_count_decomposes(self):
        model, _ = tiny_world()
        d = model.enc_config.d_model
        ni, ns = model.labels.num_intents, model.labels.num_slots
        dec = d * ni + ni + d * ns + ns
        expected = (encoder_param_count(model.enc_config)
                    + fan_param_count(model.fan_config, d) + dec)
        assert model.param_count() == expected

    def test_build_deterministic(self):
        a, _ = tiny_world()
        b, _ = tiny_world()
        assert set(a.params) == set(b.params)
        for name in a.params:
            assert np.array_equal(a.params[name].data, b.params[name].data), name

    def test_forward_shapes(self):
        model, batch = tiny_world()
        h_i, h_s, _ = model.forward(batch)
        assert h_i.shape == (2, 8)
        assert h_s.shape == (2, 5, 8)


class TestJointGradients:
    def test_every_param_receives_grad(self):
        model, batch = tiny_world()
        model.loss_and_grads(batch, 0.5, training=False)
        for name, t in model.params.items():
            assert t.grad is not None, name
            assert np.isfinite(t.grad).all(), name

    def test_spot_gradients_match_finite_differences(self):
        model, batch = tiny_world()
        randomize(model)
        loss_value, _, _ = model.loss_and_grads(batch, 0.5, training=False)
        assert np.isfinite(loss_value)

        def loss():
            h_i, h_s, _ = model.forward(batch)
            value, _ = joint_loss(h_i, h_s, model.params, batch.gold_intents,
                                  batch.gold_slots, 0.5)
            return value

        spots = ("emb.tok", "emb.pos", "enc.0.attn.wq", "enc.0.ln2.g",
                 "enc.0.ffn.b1", "fan.wa", "fan.wq", "fan.ffn.w1", "fan.ln.g",
                 "dec.wi", "dec.ws", "dec.bi", "dec.bs")
        for name in spots:
            t = model.params[name]
            assert max_rel_err(t.grad, numeric_grad(loss, t.data)) < 1e-4, name

    def test_shared_decoder_weight_grad_is_sum_of_both_uses(self):
        model, batch = tiny_world()
        randomize(model)
        model.loss_and_grads(batch, 0.5, training=False)
        total_wi = model.params["dec.wi"].grad.copy()
        total_ws = model.params["dec.ws"].grad.copy()

        # de-aliased rerun: the attention module reads copies, so the two
        # contributions land on different tensors
        model.zero_grads()
        h, _ = encode(model.params, model.enc_config, batch.token_ids,
                      batch.attention_mask)
        split = dict(model.params)
        split["dec.wi"] = Tensor(model.params["dec.wi"].data.copy())
        split["dec.ws"] = Tensor(model.params["dec.ws"].data.copy())
        h_i, h_s, fan_cache = fan_forward(h, split, model.fan_config,
                                          batch.attention_mask)
        _, cache = joint_loss(h_i, h_s, model.params, batch.gold_intents,
                              batch.gold_slots, 0.5)
        d_h_i, d_h_s = joint_loss_backward(cache, model.params)
        fan_backward(d_h_i, d_h_s, fan_cache, split)

        assert np.array_equal(total_wi,
                              model.params["dec.wi"].grad + split["dec.wi"].grad)
        assert np.array_equal(total_ws,
                              model.params["dec.ws"].grad + split["dec.ws"].grad)


class TestPrediction:
    def test_predict_batch_shapes_and_labels(self):
        model, batch = tiny_world(dtype=np.float32)
        preds = model.predict_batch(batch)
        assert len(preds) == 2
        assert len(preds[0].slots) == 5 and len(preds[1].slots) == 2
        for p in preds:
            assert p.intent in model.labels.intent_to_id
            assert all(s in model.labels.slot_to_id for s in p.slots)
        again = model.predict_batch(batch)
        assert [p.slots for p in again] == [p.slots for p in preds]

    def test_predict_tokens_handles_unknown_and_truncation(self):
        model, _ = tiny_world(dtype=np.float32)
        preds, truncated = model.predict_tokens([["zzz", "fish"]], max_len=50)
        assert truncated == 0
        assert len(preds[0].slots) == 2
        preds, truncated = model.predict_tokens([["fish"] * 9], max_len=5)
        assert truncated == 1
        assert len(preds[0].slots) == 5
