"""Adam training loop with validation-based model selection.

Each epoch reshuffles the training set with a seeded permutation, steps
through mini-batches in 32-bit mode, then scores the validation split.  The
parameters with the best validation semantic accuracy are kept and restored
into the model when training ends (early stop after `patience` epochs
without improvement).  A non-finite loss aborts immediately, naming the
step, rather than training through the damage.

Gradient clipping at global norm 1.0 is on by default; clip_norm 0 disables
it for a strictly plain update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Utterance, encode_batch, frame_tokens
from .errors import ConfigError, NumericError, ShapeError
from .metrics import EvalReport, evaluate
from .model import Model
from .rng import Rng


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 32
    max_epochs: int = 50
    lam: float = 0.5
    max_len: int = 50
    seed: int = 0
    patience: int = 10
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.max_len < 1:
            raise ConfigError("batch_size, max_epochs and max_len must be positive")
        if not 0.0 < self.lam < 1.0:
            raise ConfigError(f"lambda must be in (0, 1), got {self.lam}")
        if self.patience < 1:
            raise ConfigError(f"patience must be positive, got {self.patience}")
        if self.clip_norm < 0:
            raise ConfigError(f"clip_norm must be >= 0, got {self.clip_norm}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_intent_acc: float
    val_slot_f1: float
    val_sem_acc: float


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_report: EvalReport
    stopped_early: bool


HISTORY_COLUMNS = ("epoch", "train_loss", "val_intent_acc", "val_slot_f1",
                   "val_sem_acc")


def history_csv(history: list) -> str:
    lines = [",".join(HISTORY_COLUMNS)]
    for row in history:
        lines.append(f"{row.epoch},{row.train_loss:.6f},{row.val_intent_acc:.6f},"
                     f"{row.val_slot_f1:.6f},{row.val_sem_acc:.6f}")
    return "\n".join(lines) + "\n"


class AdamState:
    """First/second moment buffers mirroring the parameter store."""

    def __init__(self, params: dict):
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.t = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Standard bias-corrected Adam update, in the parameters' dtype."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        tensor = params[name]
        if g.shape != tensor.data.shape:
            raise ShapeError(f"grad shape {g.shape} != param shape {tensor.data.shape} for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        tensor.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm.
    Returns the pre-clip norm; max_norm 0 means no clipping."""
    total = 0.0
    for g in grads.values():
        total += float((g.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def clip_to_max_len(utts: list, max_len: int) -> list:
    """Gold-side counterpart of batch truncation, for aligned evaluation."""
    out = []
    for u in utts:
        if len(u.tokens) <= max_len:
            out.append(u)
        else:
            out.append(Utterance(u.tokens[:max_len], u.intent, u.slots[:max_len]))
    return out


def evaluate_model(model: Model, utts: list, batch_size: int, max_len: int) -> EvalReport:
    """Batched prediction over a split, scored against (clipped) golds.
    Frames tokens without the label maps, so splits may contain gold labels
    the model never saw; those simply count as misses."""
    golds = clip_to_max_len(utts, max_len)
    preds = []
    for start in range(0, len(utts), batch_size):
        chunk = utts[start : start + batch_size]
        batch = frame_tokens([list(u.tokens) for u in chunk], model.vocab, max_len)
        preds.extend(model.predict_batch(batch))
    return evaluate(preds, golds, intent_labels=model.labels.id_to_intent)


def train(model: Model, train_utts: list, valid_utts: list,
          config: TrainConfig) -> TrainResult:
    """Optimize in place; ends with the best-validation parameters loaded."""
    if not train_utts:
        raise ConfigError("training set is empty")
    if not valid_utts:
        raise ConfigError("validation set is empty")

    rng = Rng(config.seed)
    shuffle_rng = rng.spawn(101)
    dropout_rng = rng.spawn(202)
    state = AdamState(model.params)
    n = len(train_utts)

    history: list[EpochStats] = []
    best: dict | None = None
    best_epoch = 0
    best_sem = -1.0
    best_report: EvalReport | None = None
    since_best = 0
    stopped_early = False

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_total = 0.0
        for start in range(0, n, config.batch_size):
            chunk = [train_utts[i] for i in order[start : start + config.batch_size]]
            batch = encode_batch(chunk, model.vocab, model.labels, config.max_len)
            loss, _, _ = model.loss_and_grads(batch, config.lam, training=True,
                                              rng=dropout_rng)
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, step {start // config.batch_size}"
                )
            grads = {name: t.grad for name, t in model.params.items()
                     if t.grad is not None}
            clip_gradients(grads, config.clip_norm)
            adam_step(model.params, grads, state, config.learning_rate,
                      config.beta1, config.beta2, config.eps)
            loss_total += loss * batch.size

        report = evaluate_model(model, valid_utts, config.batch_size, config.max_len)
        history.append(EpochStats(
            epoch=epoch,
            train_loss=loss_total / n,
            val_intent_acc=report.intent_accuracy,
            val_slot_f1=report.slot_f1,
            val_sem_acc=report.semantic_accuracy,
        ))

        if report.semantic_accuracy > best_sem:
            best_sem = report.semantic_accuracy
            best = {name: t.data.copy() for name, t in model.params.items()}
            best_epoch = epoch
            best_report = report
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                stopped_early = True
                break

    for name, data in best.items():
        model.params[name].data = data
    model.zero_grads()
    return TrainResult(history=history, best_epoch=best_epoch,
                       best_report=best_report, stopped_early=stopped_early)
