"""Intent and slot softmax decoders and the joint training objective.

The two weight matrices W_I (d x Ni) and W_S (d x Ns) are the same tensors
the attention module reads for label attention, so their gradients
accumulate from both uses of each matrix.

The loss mixes the two cross-entropies as

    L = lam * L_ID + (1 - lam) * L_SF

with L_ID the negative log-probability of the gold intent and L_SF the sum
of per-token slot terms over unmasked content positions (summed within an
utterance, then averaged over the batch, like L_ID).  Both are computed in
log-space from logits via log-sum-exp; the probability-facing API exists
for prediction only.
"""

from __future__ import annotations

import numpy as np

from .encoder import INIT_STD
from .errors import ConfigError, DataError
from .rng import Rng
from .tensor import Tensor, softmax_last


def init_decoder_params(d: int, ni: int, ns: int, rng: Rng, dtype=np.float32) -> dict:
    if ni < 1 or ns < 1:
        raise ConfigError(f"need at least one intent and one slot label, got {ni}/{ns}")
    return {
        "dec.wi": Tensor(rng.truncated_normal((d, ni), std=INIT_STD).astype(dtype)),
        "dec.bi": Tensor(np.zeros(ni, dtype=dtype)),
        "dec.ws": Tensor(rng.truncated_normal((d, ns), std=INIT_STD).astype(dtype)),
        "dec.bs": Tensor(np.zeros(ns, dtype=dtype)),
    }


def predict_probs(h_i, h_s, params: dict):
    """(intent probs B x Ni, slot probs B x L x Ns), rows summing to 1."""
    intent = softmax_last(h_i @ params["dec.wi"].data + params["dec.bi"].data)
    slots = softmax_last(h_s @ params["dec.ws"].data + params["dec.bs"].data)
    return intent, slots


def _log_softmax(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def joint_loss(h_i, h_s, params: dict, gold_intents, gold_slots, lam: float):
    """Scalar batch loss.  gold_slots uses -1 at masked positions, which
    contribute nothing.  Returns (loss, cache); the cache carries the
    batch-mean components l_id and l_sf plus what the backward needs."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must be in (0, 1), got {lam}")
    gold_intents = np.asarray(gold_intents)
    gold_slots = np.asarray(gold_slots)
    b = h_i.shape[0]
    ni = params["dec.wi"].data.shape[1]
    ns = params["dec.ws"].data.shape[1]
    if gold_intents.min() < 0 or gold_intents.max() >= ni:
        raise DataError(f"gold intent id out of range for {ni} intents")
    if gold_slots.min() < -1 or gold_slots.max() >= ns:
        raise DataError(f"gold slot id out of range for {ns} slot labels")

    zi = h_i @ params["dec.wi"].data + params["dec.bi"].data
    zs = h_s @ params["dec.ws"].data + params["dec.bs"].data
    log_pi = _log_softmax(zi)
    log_ps = _log_softmax(zs)

    rows = np.arange(b)
    l_id_items = -log_pi[rows, gold_intents]
    slot_mask = gold_slots >= 0
    gold_safe = np.where(slot_mask, gold_slots, 0)
    picked = np.take_along_axis(log_ps, gold_safe[:, :, None], axis=2)[:, :, 0]
    l_sf_items = -(picked * slot_mask).sum(axis=1)

    l_id = float(l_id_items.mean())
    l_sf = float(l_sf_items.mean())
    loss = lam * l_id + (1.0 - lam) * l_sf
    cache = {"h_i": h_i, "h_s": h_s, "pi": np.exp(log_pi), "ps": np.exp(log_ps),
             "gold_intents": gold_intents, "gold_slots": gold_slots,
             "slot_mask": slot_mask, "lam": lam, "l_id": l_id, "l_sf": l_sf}
    return loss, cache


def joint_loss_backward(cache, params: dict):
    """Accumulate decoder-weight gradients; return (d_h_i, d_h_s)."""
    h_i, h_s = cache["h_i"], cache["h_s"]
    b = h_i.shape[0]
    lam = cache["lam"]

    d_zi = cache["pi"].copy()
    d_zi[np.arange(b), cache["gold_intents"]] -= 1.0
    d_zi *= lam / b

    d_zs = cache["ps"].copy()
    mask = cache["slot_mask"]
    gold_safe = np.where(mask, cache["gold_slots"], 0)
    rows = np.arange(b)[:, None]
    cols = np.arange(h_s.shape[1])[None, :]
    d_zs[rows, cols, gold_safe] -= 1.0
    d_zs *= ((1.0 - lam) / b) * mask[:, :, None]

    params["dec.wi"].add_grad(h_i.T @ d_zi)
    params["dec.bi"].add_grad(d_zi.sum(axis=0))
    flat_h = h_s.reshape(-1, h_s.shape[-1])
    flat_d = d_zs.reshape(-1, d_zs.shape[-1])
    params["dec.ws"].add_grad(flat_h.T @ flat_d)
    params["dec.bs"].add_grad(flat_d.sum(axis=0))

    d_h_i = d_zi @ params["dec.wi"].data.T
    d_h_s = d_zs @ params["dec.ws"].data.T
    return d_h_i, d_h_s
