"""Full model assembly: encoder -> attention module -> dual decoders.

A Model owns one flat parameter store keyed by canonical names ("emb.tok",
"enc.3.ffn.w1", "fan.wq", "dec.wi", ...).  The decoder weight matrices live
in this store once; label attention reads the very same Tensor objects, so
one backward pass accumulates their gradient from both uses.
"""

from __future__ import annotations

import numpy as np

from .attention import FanConfig, fan_backward, fan_forward, init_fan_params
from .data import Batch, LabelMaps, Prediction, Vocab, frame_tokens
from .decoder import (
    init_decoder_params,
    joint_loss,
    joint_loss_backward,
    predict_probs,
)
from .encoder import EncoderConfig, encode, encode_backward, init_encoder_params
from .rng import Rng


class Model:
    """Configs, vocabulary, label maps and the parameter store."""

    def __init__(self, enc_config: EncoderConfig, fan_config: FanConfig,
                 vocab: Vocab, labels: LabelMaps, params: dict):
        self.enc_config = enc_config
        self.fan_config = fan_config
        self.vocab = vocab
        self.labels = labels
        self.params = params

    @classmethod
    def build(cls, enc_config: EncoderConfig, fan_config: FanConfig,
              vocab: Vocab, labels: LabelMaps, seed: int = 0,
              dtype=np.float32) -> "Model":
        """Fresh random init; child RNG streams keep the draw order stable
        even if one section's shape changes."""
        rng = Rng(seed)
        params: dict = {}
        params.update(init_encoder_params(enc_config, rng.spawn(1), dtype=dtype))
        params.update(init_fan_params(fan_config, enc_config.d_model,
                                      rng.spawn(2), dtype=dtype))
        params.update(init_decoder_params(enc_config.d_model, labels.num_intents,
                                          labels.num_slots, rng.spawn(3), dtype=dtype))
        return cls(enc_config, fan_config, vocab, labels, params)

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None

    def forward(self, batch: Batch, training: bool = False, rng: Rng | None = None):
        h, enc_cache = encode(self.params, self.enc_config, batch.token_ids,
                              batch.attention_mask, training=training, rng=rng)
        h_i, h_s, fan_cache = fan_forward(h, self.params, self.fan_config,
                                          batch.attention_mask,
                                          training=training, rng=rng)
        return h_i, h_s, {"enc": enc_cache, "fan": fan_cache}

    def loss_and_grads(self, batch: Batch, lam: float, training: bool = True,
                       rng: Rng | None = None):
        """One full forward/backward; grads land on the parameter tensors.
        Returns (loss, l_id, l_sf)."""
        self.zero_grads()
        h_i, h_s, caches = self.forward(batch, training=training, rng=rng)
        loss, cache = joint_loss(h_i, h_s, self.params, batch.gold_intents,
                                 batch.gold_slots, lam)
        d_h_i, d_h_s = joint_loss_backward(cache, self.params)
        d_h = fan_backward(d_h_i, d_h_s, caches["fan"], self.params)
        encode_backward(d_h, caches["enc"], self.params, self.enc_config)
        return loss, cache["l_id"], cache["l_sf"]

    def predict_batch(self, batch: Batch) -> list[Prediction]:
        h_i, h_s, _ = self.forward(batch)
        pi, ps = predict_probs(h_i, h_s, self.params)
        intent_ids = pi.argmax(axis=-1)
        slot_ids = ps.argmax(axis=-1)
        out = []
        for b in range(batch.size):
            n = int(batch.lengths[b])
            tags = tuple(self.labels.id_to_slot[j] for j in slot_ids[b, :n])
            out.append(Prediction(self.labels.id_to_intent[int(intent_ids[b])], tags))
        return out

    def predict_tokens(self, token_lists: list[list[str]], max_len: int):
        """Predict for raw whitespace-tokenized input.
        Returns (predictions, truncated_count)."""
        batch = frame_tokens(token_lists, self.vocab, max_len)
        return self.predict_batch(batch), batch.truncated
