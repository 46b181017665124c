"""Deterministic synthetic NLU corpus for tests and demos.

A small template grammar over 3 intents and 5 slot types, rendered into the
same on-disk layout as the public ATIS/Snips distributions.  Generation is
seeded and fully reproducible; the first training record is always the
utterance "find fish story" (intent SearchScreeningEvent, slots
O B-movie_name I-movie_name).  A coverage block near the front of the
training split guarantees every template and every slot filler occurs at
least once in training, so held-out splits contain no out-of-vocabulary
tokens.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .data import Utterance
from .rng import Rng

# template syntax: plain words, or {slot_type} placeholders
_GRAMMAR: dict[str, list[str]] = {
    "SearchScreeningEvent": [
        "find {movie_name}",
        "show me {movie_name} at the {object_type}",
        "is {movie_name} playing {timeRange}",
        "find a {object_type} showing {movie_name} in {city}",
        "when can i watch {movie_name}",
    ],
    "PlayMusic": [
        "play {artist}",
        "play some music by {artist}",
        "put on a song by {artist}",
        "play {artist} for me",
    ],
    "GetWeather": [
        "what is the weather in {city}",
        "will it rain in {city} {timeRange}",
        "weather forecast for {city}",
        "how cold is it in {city} {timeRange}",
    ],
}

_FILLERS: dict[str, list[str]] = {
    "movie_name": [
        "fish story", "the silent sea", "paper moon", "night train",
        "iron harvest", "golden hour", "river king",
    ],
    "object_type": ["cinema", "theatre", "movie house", "drive in"],
    "timeRange": ["tonight", "tomorrow evening", "this afternoon", "at noon", "next friday"],
    "city": ["boston", "new york", "san francisco", "denver", "cape town"],
    "artist": ["taylor swift", "miles davis", "the beatles", "nina simone", "john coltrane"],
}

DEFAULT_SEED = 20240401
DEFAULT_SIZES = {"train": 400, "valid": 50, "test": 50}


@dataclass
class CorpusSummary:
    """Exact record counts and label sets of a generated corpus."""

    counts: dict[str, int]
    intents: set[str]
    slot_tags: set[str]


def _render(intent: str, template: str, choose) -> Utterance:
    tokens: list[str] = []
    tags: list[str] = []
    for part in template.split():
        if part.startswith("{"):
            slot_type = part[1:-1]
            words = choose(slot_type).split()
            tokens.extend(words)
            tags.append(f"B-{slot_type}")
            tags.extend(f"I-{slot_type}" for _ in words[1:])
        else:
            tokens.append(part)
            tags.append("O")
    return Utterance(tuple(tokens), intent, tuple(tags))


def _random_utterance(rng: Rng) -> Utterance:
    intents = sorted(_GRAMMAR)
    intent = intents[int(rng.uniform() * len(intents))]
    templates = _GRAMMAR[intent]
    template = templates[int(rng.uniform() * len(templates))]

    def choose(slot_type: str) -> str:
        values = _FILLERS[slot_type]
        return values[int(rng.uniform() * len(values))]

    return _render(intent, template, choose)


def _coverage_block() -> list[Utterance]:
    """One instance per (template, filler index) so training sees everything."""
    out = []
    for intent in sorted(_GRAMMAR):
        for template in _GRAMMAR[intent]:
            slot_types = [p[1:-1] for p in template.split() if p.startswith("{")]
            rounds = max((len(_FILLERS[s]) for s in slot_types), default=1)
            for i in range(rounds):
                out.append(
                    _render(intent, template, lambda s, i=i: _FILLERS[s][i % len(_FILLERS[s])])
                )
    return out


def generate_utterances(seed: int = DEFAULT_SEED, sizes: dict[str, int] | None = None):
    """Build the three splits in memory; train[0] is "find fish story"."""
    sizes = dict(DEFAULT_SIZES if sizes is None else sizes)
    rng = Rng(seed)

    anchor = _render(
        "SearchScreeningEvent", "find {movie_name}", lambda s: "fish story"
    )
    train = [anchor] + _coverage_block()
    while len(train) < sizes["train"]:
        train.append(_random_utterance(rng))
    train = train[: sizes["train"]]

    splits = {"train": train}
    for name in ("valid", "test"):
        splits[name] = [_random_utterance(rng) for _ in range(sizes[name])]
    return splits


def write_corpus(root: str | Path, seed: int = DEFAULT_SEED,
                 sizes: dict[str, int] | None = None) -> CorpusSummary:
    """Write the corpus under root/{train,valid,test}/ and return exact counts."""
    root = Path(root)
    splits = generate_utterances(seed=seed, sizes=sizes)

    intents: set[str] = set()
    slot_tags: set[str] = set()
    for name, utts in splits.items():
        split_dir = root / name
        split_dir.mkdir(parents=True, exist_ok=True)
        with open(split_dir / "seq.in", "w", encoding="utf-8") as f_in, \
             open(split_dir / "seq.out", "w", encoding="utf-8") as f_out, \
             open(split_dir / "label", "w", encoding="utf-8") as f_lab:
            for utt in utts:
                f_in.write(" ".join(utt.tokens) + "\n")
                f_out.write(" ".join(utt.slots) + "\n")
                f_lab.write(utt.intent + "\n")
                intents.add(utt.intent)
                slot_tags.update(utt.slots)

    return CorpusSummary(
        counts={name: len(utts) for name, utts in splits.items()},
        intents=intents,
        slot_tags=slot_tags,
    )
