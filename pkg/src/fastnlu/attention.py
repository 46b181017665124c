"""Fast-attention module between the encoder and the decoders.

Pipeline per batch (width W = L+2, hidden d):

    H_A = label_attention(H)        alpha = softmax(H W), H_A = (H + alpha W^T) W_A
    H_M = mhsa(H_A)                 multi-head self-attention, no biases
    H_L = layer_norm(H + H_M)       residual taken from the ENCODER output H,
                                    not from H_A (implemented as the model
                                    under test defines it)
    H'  = relu(H_L W1 + b1) W2 + b2
    H_I = H'[0], H_S = H'[1..L]     CLS row vs content rows

W is the column-concatenation of the decoder weight matrices W_I (d x Ni)
and W_S (d x Ns); those are the decoder's own tensors, aliased here, so a
training step accumulates their gradient from both uses.  The per-head
projection matrices W_i^Q/K/V (each d x d/heads) are stored concatenated as
single d x d tensors.

Each stage is optional via the ablation flags; with all three off the module
degrades to slicing layer_norm(2H), the plain joint-decoder baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .encoder import INIT_STD
from .errors import ConfigError
from .rng import Rng
from .tensor import (
    LN_EPS,
    Tensor,
    dropout_mask,
    layer_norm_rows,
    layer_norm_rows_backward,
    mha_rows,
    mha_rows_backward,
    softmax_last,
    softmax_last_backward,
)


@dataclass(frozen=True)
class FanConfig:
    """Attention-module shape.  ffn_dim 0 means d (the lightweight default);
    scale_full_d switches the attention logit denominator from sqrt(d/heads)
    to sqrt(d)."""

    heads: int = 12
    ffn_dim: int = 0
    use_label_attention: bool = True
    use_mhsa: bool = True
    use_ffn: bool = True
    scale_full_d: bool = False
    dropout_p: float = 0.1

    def __post_init__(self):
        if self.heads < 1:
            raise ConfigError(f"heads must be positive, got {self.heads}")
        if self.ffn_dim < 0:
            raise ConfigError(f"ffn_dim must be non-negative, got {self.ffn_dim}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")


def resolve_ffn_dim(config: FanConfig, d: int) -> int:
    return config.ffn_dim if config.ffn_dim else d


def fan_param_count(config: FanConfig, d: int) -> int:
    """Trainable scalars owned by this module (decoder weights not counted)."""
    f = resolve_ffn_dim(config, d)
    count = 2 * d  # layer norm
    if config.use_label_attention:
        count += d * d
    if config.use_mhsa:
        count += 4 * d * d
    if config.use_ffn:
        count += d * f + f + f * d + d
    return count


def init_fan_params(config: FanConfig, d: int, rng: Rng, dtype=np.float32) -> dict:
    """Tensors for the enabled stages only, so ablations change the trainable
    parameter count by exactly the documented amounts."""
    if d % config.heads != 0:
        raise ConfigError(
            f"hidden size {d} cannot be split equally into {config.heads} heads"
        )
    f = resolve_ffn_dim(config, d)
    params: dict[str, Tensor] = {}

    def weight(name, shape):
        params[name] = Tensor(rng.truncated_normal(shape, std=INIT_STD).astype(dtype))

    if config.use_label_attention:
        weight("fan.wa", (d, d))
    if config.use_mhsa:
        for nm in ("fan.wq", "fan.wk", "fan.wv", "fan.wo"):
            weight(nm, (d, d))
    params["fan.ln.g"] = Tensor(np.ones(d, dtype=dtype))
    params["fan.ln.b"] = Tensor(np.zeros(d, dtype=dtype))
    if config.use_ffn:
        weight("fan.ffn.w1", (d, f))
        params["fan.ffn.b1"] = Tensor(np.zeros(f, dtype=dtype))
        weight("fan.ffn.w2", (f, d))
        params["fan.ffn.b2"] = Tensor(np.zeros(d, dtype=dtype))
    return params


# ---------------------------------------------------------------------------
# label attention


def label_attention(h, wi, ws, wa, alpha_keep=None):
    """alpha = softmax(H [W_I|W_S]) jointly over all Ni+Ns columns;
    H_A = (H + alpha W^T) W_A.  Applied to every row, specials included.
    Returns (h_a, cache)."""
    w = np.concatenate([wi, ws], axis=1)
    alpha = softmax_last(h @ w)
    alpha_d = alpha if alpha_keep is None else alpha * alpha_keep
    mixed = h + alpha_d @ w.T
    h_a = mixed @ wa
    cache = {"h": h, "w": w, "wa": wa, "ni": wi.shape[1], "alpha": alpha,
             "alpha_d": alpha_d, "alpha_keep": alpha_keep, "mixed": mixed}
    return h_a, cache


def label_attention_backward(d_out, cache):
    """Gradients dict {"h", "wi", "ws", "wa"}; the wi/ws entries are this
    use's contribution to the shared decoder tensors."""
    h, w, wa = cache["h"], cache["w"], cache["wa"]
    d_out = np.asarray(d_out)
    flat = lambda a: a.reshape(-1, a.shape[-1])
    dwa = flat(cache["mixed"]).T @ flat(d_out)
    d_mixed = d_out @ wa.T
    d_alpha_d = d_mixed @ w
    dw = flat(d_mixed).T @ flat(cache["alpha_d"])  # from the W^T read
    keep = cache["alpha_keep"]
    d_alpha = d_alpha_d if keep is None else d_alpha_d * keep
    d_scores = softmax_last_backward(d_alpha, cache["alpha"])
    dw += flat(h).T @ flat(d_scores)
    dh = d_mixed + d_scores @ w.T
    ni = cache["ni"]
    return {"h": dh, "wi": dw[:, :ni], "ws": dw[:, ni:], "wa": dwa}


# ---------------------------------------------------------------------------
# full module


def attention_scale(config: FanConfig, d: int) -> float:
    return math.sqrt(d) if config.scale_full_d else math.sqrt(d / config.heads)


def fan_forward(h, params: dict, config: FanConfig, mask,
                training: bool = False, rng: Rng | None = None):
    """Encoder output B x W x d -> (h_i B x d, h_s B x L x d, cache).

    mask is the 0/1 attention mask over framed positions; padded keys are
    excluded from self-attention, and the final slicing drops CLS/SEP/PAD
    rows from h_s only by position (shorter items keep masked tail rows,
    which the loss and decoding ignore).
    """
    b, width, d = h.shape
    p = config.dropout_p if training else 0.0
    dtype = h.dtype
    cache: dict = {"width": width, "config": config}

    x = h
    if config.use_label_attention:
        wi, ws = params["dec.wi"].data, params["dec.ws"].data
        alpha_keep = None
        if p > 0.0:
            alpha_keep = dropout_mask((b, width, wi.shape[1] + ws.shape[1]), p, rng, dtype)
        x, cache["la"] = label_attention(x, wi, ws, params["fan.wa"].data, alpha_keep)
    if config.use_mhsa:
        mask_add = ((1.0 - np.asarray(mask)) * -1e9).astype(dtype)[:, None, None, :]
        probs_keep = None
        if p > 0.0:
            probs_keep = dropout_mask((b, config.heads, width, width), p, rng, dtype)
        x, cache["mh"] = mha_rows(
            x, params["fan.wq"].data, params["fan.wk"].data,
            params["fan.wv"].data, params["fan.wo"].data,
            config.heads, mask_add, attention_scale(config, d),
            biases=None, probs_keep=probs_keep,
        )

    h_l, cache["ln"] = layer_norm_rows(
        h + x, params["fan.ln.g"].data, params["fan.ln.b"].data, LN_EPS)

    out = h_l
    if config.use_ffn:
        hid_lin = h_l @ params["fan.ffn.w1"].data + params["fan.ffn.b1"].data
        hid = np.maximum(hid_lin, 0.0)
        keep_ffn = None
        if p > 0.0:
            keep_ffn = dropout_mask(hid.shape, p, rng, dtype)
            hid = hid * keep_ffn
        out = hid @ params["fan.ffn.w2"].data + params["fan.ffn.b2"].data
        cache["ffn"] = {"h_l": h_l, "hid_lin": hid_lin, "hid": hid,
                        "keep_ffn": keep_ffn}

    return out[:, 0], out[:, 1 : width - 1], cache


def fan_backward(d_h_i, d_h_s, cache, params: dict) -> np.ndarray:
    """Accumulate gradients for every tensor used by fan_forward (including
    the aliased decoder weights) and return dL/dH for the encoder."""
    config: FanConfig = cache["config"]
    width = cache["width"]
    d_h_i, d_h_s = np.asarray(d_h_i), np.asarray(d_h_s)
    b, d = d_h_i.shape
    d_out = np.zeros((b, width, d), dtype=d_h_i.dtype)
    d_out[:, 0] = d_h_i
    d_out[:, 1 : width - 1] = d_h_s

    if config.use_ffn:
        ffn = cache["ffn"]
        flat = lambda a: a.reshape(-1, a.shape[-1])
        params["fan.ffn.w2"].add_grad(flat(ffn["hid"]).T @ flat(d_out))
        params["fan.ffn.b2"].add_grad(d_out.sum(axis=(0, 1)))
        d_hid = d_out @ params["fan.ffn.w2"].data.T
        if ffn["keep_ffn"] is not None:
            d_hid = d_hid * ffn["keep_ffn"]
        d_lin = d_hid * (ffn["hid_lin"] > 0)
        params["fan.ffn.w1"].add_grad(flat(ffn["h_l"]).T @ flat(d_lin))
        params["fan.ffn.b1"].add_grad(d_lin.sum(axis=(0, 1)))
        d_out = d_lin @ params["fan.ffn.w1"].data.T

    d_sum, dg, db = layer_norm_rows_backward(d_out, cache["ln"])
    params["fan.ln.g"].add_grad(dg)
    params["fan.ln.b"].add_grad(db)

    d_h = d_sum.copy()  # residual branch straight to the encoder output
    d_x = d_sum
    if config.use_mhsa:
        grads = mha_rows_backward(d_x, cache["mh"])
        for nm in ("wq", "wk", "wv", "wo"):
            params["fan." + nm].add_grad(grads[nm])
        d_x = grads["x"]
    if config.use_label_attention:
        grads = label_attention_backward(d_x, cache["la"])
        params["fan.wa"].add_grad(grads["wa"])
        params["dec.wi"].add_grad(grads["wi"])
        params["dec.ws"].add_grad(grads["ws"])
        d_x = grads["h"]
    return d_h + d_x
