"""Evaluation metrics: intent accuracy, chunk-level slot F1, sentence-level
semantic accuracy, intent confusion matrix.

Chunking follows the lenient conlleval convention: an I-x after O, after a
different type, or at the start of a sequence opens a new chunk rather than
being discarded.  Slot F1 is micro-averaged over exact (start, end, type)
chunk matches.  Semantic accuracy is the stricter tag-level form: an
utterance counts only if the intent and every per-token slot tag match.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Prediction, Utterance
from .errors import DataError

Chunk = tuple[int, int, str]  # (start, end, type), end inclusive


@dataclass
class EvalReport:
    intent_accuracy: float
    slot_precision: float
    slot_recall: float
    slot_f1: float
    semantic_accuracy: float
    intent_confusion: np.ndarray  # (N_i, N_i) gold x predicted counts
    intent_labels: list[str]
    num_utterances: int

    def to_kv_text(self) -> str:
        return "".join(
            f"{k}={v}\n"
            for k, v in [
                ("num_utterances", self.num_utterances),
                ("intent_accuracy", repr(self.intent_accuracy)),
                ("slot_precision", repr(self.slot_precision)),
                ("slot_recall", repr(self.slot_recall)),
                ("slot_f1", repr(self.slot_f1)),
                ("semantic_accuracy", repr(self.semantic_accuracy)),
            ]
        )

    def headline(self) -> str:
        """The three numbers in the order the literature tables use."""
        return (
            f"Intent (Acc) {100.0 * self.intent_accuracy:.1f}  "
            f"Slot (F1) {100.0 * self.slot_f1:.1f}  "
            f"Sent (Acc) {100.0 * self.semantic_accuracy:.1f}"
        )


def _check_tag(tag: str) -> None:
    if tag == "O":
        return
    if len(tag) > 2 and tag[0] in "BI" and tag[1] == "-":
        return
    raise DataError(f"malformed slot tag {tag!r}")


def extract_chunks(tags) -> set[Chunk]:
    """BIO tags -> set of (start, end, type) chunks, end inclusive."""
    chunks: set[Chunk] = set()
    start = -1
    current = ""
    for i, tag in enumerate(tags):
        _check_tag(tag)
        if tag == "O":
            opens, closes = False, True
        else:
            prefix, ctype = tag.split("-", 1)
            # lenient: a dangling I-x opens a chunk like B-x would
            opens = prefix == "B" or current != ctype
            closes = opens
        if closes and start >= 0:
            chunks.add((start, i - 1, current))
            start, current = -1, ""
        if opens:
            start, current = i, tag.split("-", 1)[1]
    if start >= 0:
        chunks.add((start, len(tags) - 1, current))
    return chunks


def slot_f1(gold: list, pred: list) -> tuple[float, float, float]:
    """Micro-averaged chunk precision/recall/F1 over aligned tag sequences."""
    if len(gold) != len(pred):
        raise DataError(f"{len(gold)} gold vs {len(pred)} predicted sequences")
    matches = gold_total = pred_total = 0
    for g_tags, p_tags in zip(gold, pred):
        if len(g_tags) != len(p_tags):
            raise DataError(
                f"tag sequence length mismatch: {len(g_tags)} vs {len(p_tags)}"
            )
        g_chunks = extract_chunks(g_tags)
        p_chunks = extract_chunks(p_tags)
        matches += len(g_chunks & p_chunks)
        gold_total += len(g_chunks)
        pred_total += len(p_chunks)
    precision = matches / pred_total if pred_total else 0.0
    recall = matches / gold_total if gold_total else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def evaluate(preds: list[Prediction], golds: list[Utterance],
             intent_labels: list[str] | None = None) -> EvalReport:
    """Score aligned predictions against gold utterances."""
    if not golds:
        raise DataError("cannot evaluate an empty utterance list")
    if len(preds) != len(golds):
        raise DataError(f"{len(preds)} predictions for {len(golds)} utterances")

    if intent_labels is None:
        intent_labels = sorted(
            {u.intent for u in golds} | {p.intent for p in preds}
        )
    index = {name: i for i, name in enumerate(intent_labels)}
    confusion = np.zeros((len(intent_labels), len(intent_labels)), dtype=np.int64)

    intent_hits = 0
    semantic_hits = 0
    for pred, gold in zip(preds, golds):
        if len(pred.slots) != len(gold.slots):
            raise DataError(
                f"prediction has {len(pred.slots)} tags for "
                f"{len(gold.slots)} gold tags"
            )
        intent_ok = pred.intent == gold.intent
        slots_ok = tuple(pred.slots) == tuple(gold.slots)
        intent_hits += intent_ok
        semantic_hits += intent_ok and slots_ok
        if gold.intent in index and pred.intent in index:
            confusion[index[gold.intent], index[pred.intent]] += 1

    precision, recall, f1 = slot_f1(
        [list(g.slots) for g in golds], [list(p.slots) for p in preds]
    )
    n = len(golds)
    return EvalReport(
        intent_accuracy=intent_hits / n,
        slot_precision=precision,
        slot_recall=recall,
        slot_f1=f1,
        semantic_accuracy=semantic_hits / n,
        intent_confusion=confusion,
        intent_labels=list(intent_labels),
        num_utterances=n,
    )
