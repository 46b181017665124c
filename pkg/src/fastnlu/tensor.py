"""Minimal dense-tensor core with hand-written reverse-mode gradients.

A `Tensor` is a rank-1..3 float array plus an optional gradient slot that
accumulates.  There is no taped graph: every forward op has a matching
`*_backward` function, and composite layers (attention, encoder blocks, the
loss) chain those by hand in reverse order, caching whatever intermediates
they need.

Two float widths are supported.  float64 is used by the finite-difference
gradient tests, which are unreliable at single precision; training,
inference and the latency bench run in float32.  Ops preserve the dtype of
their inputs.

The `*_last` / `*_rows` array kernels at the bottom are the shared numerics
the composite layers call directly on plain ndarrays (including rank-4
intermediates internal to multi-head attention); the Tensor-level ops wrap
the same kernels.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .rng import Rng

FLOAT_DTYPES = (np.float32, np.float64)

# layer-norm variance floor used across the model
LN_EPS = 1e-12


class Tensor:
    """Dense float array with shape metadata and an accumulating grad slot."""

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if not 1 <= arr.ndim <= 3:
            raise ShapeError(f"tensor rank must be 1..3, got shape {arr.shape}")
        if arr.size == 0:
            raise ShapeError(f"tensor must be non-empty, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def add_grad(self, g) -> None:
        """Accumulate into the grad slot, zero-initializing it on first use."""
        g = _asarray(g)
        if g.shape != self.data.shape:
            raise ShapeError(f"grad shape {g.shape} != tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name})"


def _asarray(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# ---------------------------------------------------------------------------
# spec ops on Tensors


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return Tensor(a.data @ b.data)


def matmul_backward(d_out, a: Tensor, b: Tensor):
    """Accumulates dL/da = dL/dc . b^T and dL/db = a^T . dL/dc."""
    d = _asarray(d_out)
    da = d @ b.data.T
    db = a.data.T @ d
    a.add_grad(da)
    b.add_grad(db)
    return da, db


def softmax_rows(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {x.shape}")
    return Tensor(softmax_last(x.data))


def softmax_rows_backward(d_out, x: Tensor, y: Tensor) -> np.ndarray:
    dx = softmax_last_backward(_asarray(d_out), y.data)
    x.add_grad(dx)
    return dx


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float) -> Tensor:
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(
            f"layer_norm params must have shape ({x.shape[-1]},), "
            f"got gamma {gamma.shape} beta {beta.shape}"
        )
    y, _ = layer_norm_rows(x.data, gamma.data, beta.data, eps)
    return Tensor(y)


def layer_norm_backward(d_out, x: Tensor, gamma: Tensor, beta: Tensor, eps: float):
    _, cache = layer_norm_rows(x.data, gamma.data, beta.data, eps)
    dx, dgamma, dbeta = layer_norm_rows_backward(_asarray(d_out), cache)
    x.add_grad(dx)
    gamma.add_grad(dgamma)
    beta.add_grad(dbeta)
    return dx, dgamma, dbeta


def relu(x: Tensor) -> Tensor:
    return Tensor(np.maximum(x.data, 0))


def relu_backward(d_out, x: Tensor) -> np.ndarray:
    dx = _asarray(d_out) * (x.data > 0)
    x.add_grad(dx)
    return dx


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}")
    return Tensor(a.data + b.data)


def add_backward(d_out, a: Tensor, b: Tensor):
    d = _asarray(d_out)
    a.add_grad(d)
    b.add_grad(d)
    return d, d


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols row mismatch: {a.shape} vs {b.shape}")
    return Tensor(np.concatenate([a.data, b.data], axis=1))


def concat_cols_backward(d_out, a: Tensor, b: Tensor):
    d = _asarray(d_out)
    da, db = d[:, : a.shape[1]], d[:, a.shape[1]:]
    a.add_grad(da)
    b.add_grad(db)
    return da, db


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")
    return Tensor(x.data.T.copy())


def transpose_backward(d_out, x: Tensor) -> np.ndarray:
    dx = _asarray(d_out).T.copy()
    x.add_grad(dx)
    return dx


def split_rows(x: Tensor, at: int):
    """Split a matrix into rows [:at] and rows [at:]."""
    if x.data.ndim != 2 or not 0 < at < x.shape[0]:
        raise ShapeError(f"cannot split shape {x.shape} at row {at}")
    return Tensor(x.data[:at].copy()), Tensor(x.data[at:].copy())


def split_rows_backward(d_top, d_bottom, x: Tensor) -> np.ndarray:
    dx = np.concatenate([_asarray(d_top), _asarray(d_bottom)], axis=0)
    x.add_grad(dx)
    return dx


def dropout(x: Tensor, p: float, training: bool, rng: Rng | None):
    """Inverted dropout.  Returns (out, mask); mask is None in inference mode,
    where the op is the identity on the same underlying array."""
    if not 0.0 <= p < 1.0:
        raise ShapeError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return Tensor(x.data), None
    mask = dropout_mask(x.shape, p, rng, x.data.dtype)
    return Tensor(x.data * mask), mask


def dropout_backward(d_out, mask: np.ndarray | None) -> np.ndarray:
    d = _asarray(d_out)
    return d if mask is None else d * mask


# ---------------------------------------------------------------------------
# array kernels (shared with the composite layers)


def softmax_last(z: np.ndarray) -> np.ndarray:
    """Row-stable softmax over the last axis."""
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_last_backward(d: np.ndarray, y: np.ndarray) -> np.ndarray:
    # Jacobian-vector product: dz = y * (d - sum(d * y))
    inner = (d * y).sum(axis=-1, keepdims=True)
    return y * (d - inner)


def layer_norm_rows(x, gamma, beta, eps):
    """Per-row normalization with population (divide-by-d) variance."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma + beta
    return y, {"xhat": xhat, "inv": inv, "gamma": gamma}


def layer_norm_rows_backward(d, cache):
    xhat, inv, gamma = cache["xhat"], cache["inv"], cache["gamma"]
    dim = xhat.shape[-1]
    dxhat = d * gamma
    dx = (inv / dim) * (
        dim * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    lead = tuple(range(d.ndim - 1))
    dgamma = (d * xhat).sum(axis=lead)
    dbeta = d.sum(axis=lead)
    return dx, dgamma, dbeta


def dropout_mask(shape, p: float, rng: Rng, dtype) -> np.ndarray:
    """Scaled keep-mask for inverted dropout: 0 with prob p, else 1/(1-p)."""
    if rng is None:
        raise ShapeError("training-mode dropout requires an rng")
    keep = rng.uniform(shape) >= p
    return keep.astype(dtype) / dtype.type(1.0 - p)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu_forward(x: np.ndarray):
    """tanh-approximation GELU; returns (y, cache) for the matching backward."""
    t = np.tanh(_GELU_C * (x + _GELU_A * x ** 3))
    return 0.5 * x * (1.0 + t), {"x": x, "t": t}


def gelu_backward(d: np.ndarray, cache) -> np.ndarray:
    x, t = cache["x"], cache["t"]
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return d * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


# ---------------------------------------------------------------------------
# shared multi-head attention kernel (encoder blocks and the FAN module)


def split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    """B x W x d -> B x heads x W x d/heads."""
    b, w, d = x.shape
    return x.reshape(b, w, heads, d // heads).transpose(0, 2, 1, 3)


def merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, w, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, w, h * dh)


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1])


def mha_rows(x, wq, wk, wv, wo, heads: int, mask_add, scale: float,
             biases=None, probs_keep=None):
    """Multi-head scaled dot-product self-attention over rows of x [B x W x d].

    mask_add is an additive B x 1 x 1 x W float mask (-1e9 at padded keys) or
    None; scale is the logit denominator; biases is (bq, bk, bv, bo) or None;
    probs_keep is a dropout keep-mask over attention probabilities or None.
    Returns (out [B x W x d], cache).
    """
    q, k, v = x @ wq, x @ wk, x @ wv
    if biases is not None:
        bq, bk, bv, _ = biases
        q, k, v = q + bq, k + bk, v + bv
    qh, kh, vh = (split_heads(t, heads) for t in (q, k, v))
    scores = qh @ kh.transpose(0, 1, 3, 2) / scale
    if mask_add is not None:
        scores = scores + mask_add
    probs = softmax_last(scores)
    probs_d = probs if probs_keep is None else probs * probs_keep
    ctx = merge_heads(probs_d @ vh)
    out = ctx @ wo
    if biases is not None:
        out = out + biases[3]
    cache = {"x": x, "wq": wq, "wk": wk, "wv": wv, "wo": wo, "heads": heads,
             "scale": scale, "biases": biases, "probs_keep": probs_keep,
             "qh": qh, "kh": kh, "vh": vh, "probs": probs, "probs_d": probs_d,
             "ctx": ctx}
    return out, cache


def mha_rows_backward(d_out, cache):
    """Gradients of mha_rows; returns a dict keyed like the arguments
    ("x", "wq", ..., and "bq".."bo" when biases were supplied)."""
    x, heads, scale = cache["x"], cache["heads"], cache["scale"]
    d_out = np.asarray(d_out)
    grads = {"wo": _flat(cache["ctx"]).T @ _flat(d_out)}
    d_ctx = split_heads(d_out @ cache["wo"].T, heads)
    d_probs_d = d_ctx @ cache["vh"].transpose(0, 1, 3, 2)
    dvh = cache["probs_d"].transpose(0, 1, 3, 2) @ d_ctx
    keep = cache["probs_keep"]
    d_probs = d_probs_d if keep is None else d_probs_d * keep
    d_scores = softmax_last_backward(d_probs, cache["probs"])
    dqh = d_scores @ cache["kh"] / scale
    dkh = d_scores.transpose(0, 1, 3, 2) @ cache["qh"] / scale
    dq, dk, dv = merge_heads(dqh), merge_heads(dkh), merge_heads(dvh)
    if cache["biases"] is not None:
        grads["bq"], grads["bk"], grads["bv"] = (
            t.sum(axis=(0, 1)) for t in (dq, dk, dv))
        grads["bo"] = d_out.sum(axis=(0, 1))
    xf = _flat(x)
    grads["wq"] = xf.T @ _flat(dq)
    grads["wk"] = xf.T @ _flat(dk)
    grads["wv"] = xf.T @ _flat(dv)
    grads["x"] = dq @ cache["wq"].T + dk @ cache["wk"].T + dv @ cache["wv"].T
    return grads
