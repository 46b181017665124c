"""From-scratch transformer encoder with hand-written backprop.

Token embeddings plus learned position embeddings feed a stack of post-norm
blocks (self-attention -> add&norm -> feed-forward -> add&norm).  Padded key
positions are excluded from attention with an additive -1e9 mask, so the
rows belonging to real tokens are invariant to how much padding a batch
carries.  Segment embeddings are deliberately omitted: with a single
utterance per example they carry no information for either task.

Parameter count is closed-form:

    V*d + P*d + num_blocks * (4*d^2 + 2*d*f + f + 9*d)

with V the vocabulary size, P max_positions, d the hidden size and f the
block FFN width (default 4d).  `encoder_param_count` returns exactly this
and the tests hold the implementation to it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .rng import Rng
from .tensor import (
    LN_EPS,
    Tensor,
    dropout_mask,
    gelu_backward,
    gelu_forward,
    layer_norm_rows,
    layer_norm_rows_backward,
    mha_rows,
    mha_rows_backward,
)

INIT_STD = 0.02
_ACTIVATIONS = ("relu", "gelu")


@dataclass(frozen=True)
class EncoderConfig:
    """Shape of the encoder stack.  ffn_dim 0 means the conventional 4*d."""

    vocab_size: int
    d_model: int = 312
    num_blocks: int = 4
    num_heads: int = 12
    ffn_dim: int = 0
    max_positions: int = 52
    dropout_p: float = 0.1
    activation: str = "relu"

    def __post_init__(self):
        if self.vocab_size < 4:
            raise ConfigError(f"vocab_size must cover the 4 reserved ids, got {self.vocab_size}")
        if self.d_model < 1 or self.num_blocks < 1 or self.num_heads < 1:
            raise ConfigError(
                f"d_model/num_blocks/num_heads must be positive, got "
                f"{self.d_model}/{self.num_blocks}/{self.num_heads}"
            )
        if self.d_model % self.num_heads != 0:
            raise ConfigError(
                f"hidden size {self.d_model} cannot be split equally into "
                f"{self.num_heads} heads"
            )
        if self.ffn_dim == 0:
            object.__setattr__(self, "ffn_dim", 4 * self.d_model)
        if self.ffn_dim < 1:
            raise ConfigError(f"ffn_dim must be positive, got {self.ffn_dim}")
        if self.max_positions < 3:
            raise ConfigError(f"max_positions must be at least 3, got {self.max_positions}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(
                f"activation must be one of {_ACTIVATIONS}, got {self.activation!r}"
            )


def encoder_param_count(config: EncoderConfig) -> int:
    d, f = config.d_model, config.ffn_dim
    per_block = 4 * d * d + 2 * d * f + f + 9 * d
    return (config.vocab_size + config.max_positions) * d + config.num_blocks * per_block


def encoder_param_shapes(config: EncoderConfig):
    """Yield (name, shape, init) for every tensor, init in {"normal", 0.0, 1.0}.

    Single source of truth for the parameter layout: init materializes from
    this and the count tests sum it against the closed form.
    """
    d, f = config.d_model, config.ffn_dim
    yield "emb.tok", (config.vocab_size, d), "normal"
    yield "emb.pos", (config.max_positions, d), "normal"
    for i in range(config.num_blocks):
        pre = f"enc.{i}."
        for nm in ("attn.wq", "attn.wk", "attn.wv", "attn.wo"):
            yield pre + nm, (d, d), "normal"
        for nm in ("attn.bq", "attn.bk", "attn.bv", "attn.bo"):
            yield pre + nm, (d,), 0.0
        yield pre + "ffn.w1", (d, f), "normal"
        yield pre + "ffn.b1", (f,), 0.0
        yield pre + "ffn.w2", (f, d), "normal"
        yield pre + "ffn.b2", (d,), 0.0
        yield pre + "ln1.g", (d,), 1.0
        yield pre + "ln1.b", (d,), 0.0
        yield pre + "ln2.g", (d,), 1.0
        yield pre + "ln2.b", (d,), 0.0


def init_encoder_params(config: EncoderConfig, rng: Rng, dtype=np.float32) -> dict:
    """Truncated-normal weights (std 0.02), zero biases, identity layer norms."""
    params: dict[str, Tensor] = {}
    for name, shape, kind in encoder_param_shapes(config):
        if kind == "normal":
            params[name] = Tensor(rng.truncated_normal(shape, std=INIT_STD).astype(dtype))
        else:
            params[name] = Tensor(np.full(shape, kind, dtype=dtype))
    return params


def encode(params: dict, config: EncoderConfig, token_ids, attention_mask,
           training: bool = False, rng: Rng | None = None):
    """Run the stack over a framed batch.

    token_ids and attention_mask are int arrays of shape B x W (W = L+2).
    Returns (H, cache) with H a B x W x d float array; the cache feeds
    encode_backward.
    """
    ids = np.asarray(token_ids)
    mask = np.asarray(attention_mask)
    if ids.ndim != 2 or mask.shape != ids.shape:
        raise DataError(f"expected matching B x W id/mask arrays, got {ids.shape} and {mask.shape}")
    b, w = ids.shape
    if w > config.max_positions:
        raise DataError(f"batch width {w} exceeds max_positions {config.max_positions}")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise DataError(f"token id out of range for vocab of {config.vocab_size}")

    tok, pos = params["emb.tok"].data, params["emb.pos"].data
    dtype = tok.dtype
    p = config.dropout_p if training else 0.0
    h = tok[ids] + pos[:w]
    keep_emb = None
    if p > 0.0:
        keep_emb = dropout_mask(h.shape, p, rng, dtype)
        h = h * keep_emb

    mask_add = ((1.0 - mask) * -1e9).astype(dtype)[:, None, None, :]
    scale = math.sqrt(config.d_model / config.num_heads)
    blocks = []
    for i in range(config.num_blocks):
        pre = f"enc.{i}."

        def g(name):
            return params[pre + name].data

        keep_attn = None
        if p > 0.0:
            keep_attn = dropout_mask((b, config.num_heads, w, w), p, rng, dtype)
        attn_out, attn_cache = mha_rows(
            h, g("attn.wq"), g("attn.wk"), g("attn.wv"), g("attn.wo"),
            config.num_heads, mask_add, scale,
            biases=(g("attn.bq"), g("attn.bk"), g("attn.bv"), g("attn.bo")),
            probs_keep=keep_attn,
        )
        y1, ln1_cache = layer_norm_rows(h + attn_out, g("ln1.g"), g("ln1.b"), LN_EPS)

        hid_lin = y1 @ g("ffn.w1") + g("ffn.b1")
        if config.activation == "relu":
            hid, act_cache = np.maximum(hid_lin, 0.0), None
        else:
            hid, act_cache = gelu_forward(hid_lin)
        keep_ffn = None
        if p > 0.0:
            keep_ffn = dropout_mask(hid.shape, p, rng, dtype)
            hid = hid * keep_ffn
        ffn_out = hid @ g("ffn.w2") + g("ffn.b2")
        y2, ln2_cache = layer_norm_rows(y1 + ffn_out, g("ln2.g"), g("ln2.b"), LN_EPS)

        blocks.append({"attn": attn_cache, "ln1": ln1_cache, "y1": y1,
                       "hid_lin": hid_lin, "act": act_cache, "hid": hid,
                       "keep_ffn": keep_ffn, "ln2": ln2_cache})
        h = y2

    cache = {"ids": ids, "width": w, "keep_emb": keep_emb, "blocks": blocks}
    return h, cache


def encode_backward(d_out, cache, params: dict, config: EncoderConfig) -> None:
    """Accumulate dL/dparam for every encoder parameter given dL/dH."""
    d = np.asarray(d_out)

    def acc(name, g):
        params[name].add_grad(g)

    for i in reversed(range(config.num_blocks)):
        blk = cache["blocks"][i]
        pre = f"enc.{i}."

        d_sum2, dg2, db2 = layer_norm_rows_backward(d, blk["ln2"])
        acc(pre + "ln2.g", dg2)
        acc(pre + "ln2.b", db2)
        d_y1 = d_sum2.copy()

        hid = blk["hid"]
        w2 = params[pre + "ffn.w2"].data
        acc(pre + "ffn.w2", hid.reshape(-1, hid.shape[-1]).T @ d_sum2.reshape(-1, d_sum2.shape[-1]))
        acc(pre + "ffn.b2", d_sum2.sum(axis=(0, 1)))
        d_hid = d_sum2 @ w2.T
        if blk["keep_ffn"] is not None:
            d_hid = d_hid * blk["keep_ffn"]
        if config.activation == "relu":
            d_lin = d_hid * (blk["hid_lin"] > 0)
        else:
            d_lin = gelu_backward(d_hid, blk["act"])
        y1, w1 = blk["y1"], params[pre + "ffn.w1"].data
        acc(pre + "ffn.w1", y1.reshape(-1, y1.shape[-1]).T @ d_lin.reshape(-1, d_lin.shape[-1]))
        acc(pre + "ffn.b1", d_lin.sum(axis=(0, 1)))
        d_y1 += d_lin @ w1.T

        d_sum1, dg1, db1 = layer_norm_rows_backward(d_y1, blk["ln1"])
        acc(pre + "ln1.g", dg1)
        acc(pre + "ln1.b", db1)
        grads = mha_rows_backward(d_sum1, blk["attn"])
        for short, g in grads.items():
            if short != "x":
                acc(pre + "attn." + short, g)
        d = d_sum1 + grads["x"]

    if cache["keep_emb"] is not None:
        d = d * cache["keep_emb"]
    tok = params["emb.tok"]
    if tok.grad is None:
        tok.zero_grad()
    np.add.at(tok.grad, cache["ids"], d)
    pos_grad = np.zeros_like(params["emb.pos"].data)
    pos_grad[: cache["width"]] = d.sum(axis=0)
    params["emb.pos"].add_grad(pos_grad)
