"""Corpus ingestion, vocabularies, label maps and padded batches.

A corpus directory follows the common public layout of the ATIS and Snips
distributions: `<root>/{train,valid,test}/{seq.in,seq.out,label}` with one
record per line, tokens and BIO slot tags whitespace-separated and aligned
one-to-one.  Tokenization is whitespace-only so slot tags stay aligned by
construction; there is no subword segmentation.

Batches frame every utterance as [CLS] w_1 .. w_T [SEP] followed by padding,
so a T-token utterance occupies T+2 positions and slot tags are read at
positions 1..T.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError

PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<unk>", "<cls>", "<sep>")
SLOT_PAD = -1  # gold-slot sentinel at padded positions, excluded from the loss

_TAG_RE = re.compile(r"^(O|[BI]-.+)$")


@dataclass(frozen=True)
class Utterance:
    tokens: tuple[str, ...]
    intent: str
    slots: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise DataError("utterance must contain at least one token")
        if len(self.slots) != len(self.tokens):
            raise DataError(
                f"{len(self.slots)} slot tags for {len(self.tokens)} tokens"
            )


@dataclass(frozen=True)
class Prediction:
    """Decoded model output: one intent plus one BIO tag per content token."""

    intent: str
    slots: tuple[str, ...]


class Vocab:
    """Token ids with four reserved slots; built from training frequencies.

    Ids are dense: reserved 0..3, then tokens by descending frequency with
    lexicographic tie-breaks, so rebuilding on the same corpus is
    deterministic.  Tokens below `min_freq` are dropped and encode to UNK.
    """

    def __init__(self, token_to_id: dict[str, int], min_freq: int):
        self.token_to_id = token_to_id
        self.min_freq = min_freq
        self.id_to_token = [""] * len(token_to_id)
        for tok, i in token_to_id.items():
            self.id_to_token[i] = tok

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)


@dataclass
class LabelMaps:
    intent_to_id: dict[str, int]
    slot_to_id: dict[str, int]
    id_to_intent: list[str] = field(default_factory=list)
    id_to_slot: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.id_to_intent:
            self.id_to_intent = [""] * len(self.intent_to_id)
            for name, i in self.intent_to_id.items():
                self.id_to_intent[i] = name
        if not self.id_to_slot:
            self.id_to_slot = [""] * len(self.slot_to_id)
            for name, i in self.slot_to_id.items():
                self.id_to_slot[i] = name

    @property
    def num_intents(self) -> int:
        return len(self.intent_to_id)

    @property
    def num_slots(self) -> int:
        return len(self.slot_to_id)


@dataclass
class Batch:
    """Padded model input.  Width is L+2 where L is the content width."""

    token_ids: np.ndarray       # (B, L+2) int64
    attention_mask: np.ndarray  # (B, L+2) 0/1 int64
    gold_intents: np.ndarray    # (B,) int64
    gold_slots: np.ndarray      # (B, L) int64, SLOT_PAD at t >= lengths[b]
    lengths: np.ndarray         # (B,) int64 content lengths
    truncated: int = 0          # utterances whose tail was cut at max_len

    @property
    def size(self) -> int:
        return self.token_ids.shape[0]

    @property
    def content_width(self) -> int:
        return self.token_ids.shape[1] - 2


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise DataError(f"missing corpus file: {path}")
    raw = path.read_text(encoding="utf-8")
    lines = raw.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [line.rstrip("\r") for line in lines]


def load_split(split_dir: str | Path, lowercase: bool = True) -> list[Utterance]:
    """Read one split (seq.in / seq.out / label) into Utterances."""
    split_dir = Path(split_dir)
    seq_in = _read_lines(split_dir / "seq.in")
    seq_out = _read_lines(split_dir / "seq.out")
    labels = _read_lines(split_dir / "label")
    if not len(seq_in) == len(seq_out) == len(labels):
        raise ParseError(
            split_dir,
            min(len(seq_in), len(seq_out), len(labels)) + 1,
            f"line counts differ: seq.in={len(seq_in)} "
            f"seq.out={len(seq_out)} label={len(labels)}",
        )

    utts = []
    for i, (toks_line, tags_line, intent) in enumerate(zip(seq_in, seq_out, labels), 1):
        tokens = toks_line.split()
        tags = tags_line.split()
        if not tokens:
            raise ParseError(split_dir / "seq.in", i, "empty utterance")
        if len(tokens) != len(tags):
            raise ParseError(
                split_dir / "seq.out", i,
                f"{len(tags)} slot tags for {len(tokens)} tokens",
            )
        intent = intent.strip()
        if not intent:
            raise ParseError(split_dir / "label", i, "empty intent label")
        for tag in tags:
            if not _TAG_RE.match(tag):
                raise ParseError(split_dir / "seq.out", i, f"malformed slot tag {tag!r}")
        if lowercase:
            tokens = [t.lower() for t in tokens]
        utts.append(Utterance(tuple(tokens), intent, tuple(tags)))
    return utts


def build_vocab(train: list[Utterance], min_freq: int = 1) -> Vocab:
    if not train:
        raise DataError("cannot build a vocabulary from an empty training set")
    if min_freq < 1:
        raise DataError(f"min_freq must be >= 1, got {min_freq}")
    freq: dict[str, int] = {}
    for utt in train:
        for tok in utt.tokens:
            freq[tok] = freq.get(tok, 0) + 1
    kept = sorted(
        (tok for tok, n in freq.items() if n >= min_freq),
        key=lambda tok: (-freq[tok], tok),
    )
    token_to_id = {tok: i for i, tok in enumerate(RESERVED_TOKENS)}
    for tok in kept:
        token_to_id[tok] = len(token_to_id)
    return Vocab(token_to_id, min_freq)


def build_label_maps(train: list[Utterance]) -> LabelMaps:
    """Intent ids in sorted order; slot id 0 is always "O", rest sorted."""
    if not train:
        raise DataError("cannot build label maps from an empty training set")
    intents = sorted({utt.intent for utt in train})
    slots = sorted({tag for utt in train for tag in utt.slots} - {"O"})
    return LabelMaps(
        intent_to_id={name: i for i, name in enumerate(intents)},
        slot_to_id={"O": 0, **{name: i + 1 for i, name in enumerate(slots)}},
    )


def encode_batch(
    utts: list[Utterance],
    vocab: Vocab,
    labels: LabelMaps,
    max_len: int,
    unknown_slot_to_o: bool = False,
) -> Batch:
    """Encode utterances into one padded batch with [CLS]/[SEP] framing."""
    if max_len < 1:
        raise DataError(f"max_len must be >= 1, got {max_len}")
    if not utts:
        raise DataError("cannot encode an empty batch")

    truncated = 0
    lengths = []
    for utt in utts:
        n = len(utt.tokens)
        if n > max_len:
            truncated += 1
            n = max_len
        lengths.append(n)
    width = max(lengths)

    b = len(utts)
    token_ids = np.full((b, width + 2), PAD_ID, dtype=np.int64)
    mask = np.zeros((b, width + 2), dtype=np.int64)
    gold_intents = np.zeros(b, dtype=np.int64)
    gold_slots = np.full((b, width), SLOT_PAD, dtype=np.int64)

    for i, utt in enumerate(utts):
        n = lengths[i]
        if utt.intent not in labels.intent_to_id:
            raise DataError(f"unknown intent label {utt.intent!r}")
        gold_intents[i] = labels.intent_to_id[utt.intent]
        token_ids[i, 0] = CLS_ID
        for t in range(n):
            token_ids[i, 1 + t] = vocab.encode(utt.tokens[t])
            tag = utt.slots[t]
            if tag not in labels.slot_to_id:
                if not unknown_slot_to_o:
                    raise DataError(f"unknown slot label {tag!r}")
                tag = "O"
            gold_slots[i, t] = labels.slot_to_id[tag]
        token_ids[i, 1 + n] = SEP_ID
        mask[i, : n + 2] = 1

    return Batch(
        token_ids=token_ids,
        attention_mask=mask,
        gold_intents=gold_intents,
        gold_slots=gold_slots,
        lengths=np.asarray(lengths, dtype=np.int64),
        truncated=truncated,
    )


def frame_tokens(token_lists: list[list[str]], vocab: Vocab, max_len: int) -> Batch:
    """Frame unlabeled token sequences for inference.

    Same framing and truncation rules as encode_batch; the gold fields are
    placeholders (intent 0, every slot SLOT_PAD) and must not be read.
    """
    if max_len < 1:
        raise DataError(f"max_len must be >= 1, got {max_len}")
    if not token_lists or any(not toks for toks in token_lists):
        raise DataError("cannot frame an empty token sequence")

    truncated = sum(1 for toks in token_lists if len(toks) > max_len)
    lengths = [min(len(toks), max_len) for toks in token_lists]
    width = max(lengths)
    b = len(token_lists)
    token_ids = np.full((b, width + 2), PAD_ID, dtype=np.int64)
    mask = np.zeros((b, width + 2), dtype=np.int64)
    for i, toks in enumerate(token_lists):
        n = lengths[i]
        token_ids[i, 0] = CLS_ID
        token_ids[i, 1 : 1 + n] = [vocab.encode(t) for t in toks[:n]]
        token_ids[i, 1 + n] = SEP_ID
        mask[i, : n + 2] = 1
    return Batch(
        token_ids=token_ids,
        attention_mask=mask,
        gold_intents=np.zeros(b, dtype=np.int64),
        gold_slots=np.full((b, width), SLOT_PAD, dtype=np.int64),
        lengths=np.asarray(lengths, dtype=np.int64),
        truncated=truncated,
    )


def decode_batch(batch: Batch, vocab: Vocab, labels: LabelMaps) -> list[Utterance]:
    """Invert encode_batch (exact for non-truncated, in-vocabulary input)."""
    out = []
    for i in range(batch.size):
        n = int(batch.lengths[i])
        tokens = tuple(vocab.id_to_token[j] for j in batch.token_ids[i, 1 : 1 + n])
        slots = tuple(labels.id_to_slot[j] for j in batch.gold_slots[i, :n])
        intent = labels.id_to_intent[int(batch.gold_intents[i])]
        out.append(Utterance(tokens, intent, slots))
    return out
