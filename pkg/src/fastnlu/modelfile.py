"""Single-file model checkpoints: text manifest plus raw float32 payload.

Layout: the magic line ``FANM1``, one decimal line with the manifest byte
length, the UTF-8 manifest, then the tensor payload.  The manifest is flat
``key=value`` lines covering both configs, an optional training snapshot,
the vocabulary, the label maps and a tensor directory mapping each name to
dtype, shape and byte offset.  Tensors are serialized as little-endian
32-bit floats in lexicographic name order, so saving a freshly loaded model
reproduces the original file byte for byte.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .attention import FanConfig, resolve_ffn_dim
from .data import LabelMaps, Vocab
from .encoder import EncoderConfig, encoder_param_shapes
from .errors import ModelFileError
from .model import Model
from .tensor import Tensor

MAGIC = b"FANM1"

# manifest value encoding for the payload dtype; only f4 is ever written
_DTYPE_TAG = "f4"
_ITEM_SIZE = 4


@dataclass
class LoadedModel:
    """A deserialized model plus the training snapshot stored with it."""

    model: Model
    train_meta: dict


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    return str(value)


def _config_lines(enc: EncoderConfig, fan: FanConfig) -> list:
    lines = [
        f"config.activation={enc.activation}",
        f"config.d_model={enc.d_model}",
        f"config.dropout_p={_fmt(enc.dropout_p)}",
        f"config.ffn_dim={enc.ffn_dim}",
        f"config.max_positions={enc.max_positions}",
        f"config.num_blocks={enc.num_blocks}",
        f"config.num_heads={enc.num_heads}",
        f"config.vocab_size={enc.vocab_size}",
        f"fan.dropout_p={_fmt(fan.dropout_p)}",
        f"fan.ffn_dim={fan.ffn_dim}",
        f"fan.heads={fan.heads}",
        f"fan.scale_full_d={_fmt(fan.scale_full_d)}",
        f"fan.use_ffn={_fmt(fan.use_ffn)}",
        f"fan.use_label_attention={_fmt(fan.use_label_attention)}",
        f"fan.use_mhsa={_fmt(fan.use_mhsa)}",
    ]
    return lines


def model_bytes(model: Model, train_meta: dict | None = None) -> bytes:
    """Serialize to the single-file format and return the raw bytes."""
    names = sorted(model.params)
    lines = _config_lines(model.enc_config, model.fan_config)
    for key in sorted(train_meta or {}):
        if "=" in key or "\n" in key or "\n" in str(train_meta[key]):
            raise ModelFileError(f"train.{key}: key or value not storable")
        lines.append(f"train.{key}={train_meta[key]}")
    lines.append(f"vocab.min_freq={model.vocab.min_freq}")
    for i, token in enumerate(model.vocab.id_to_token):
        lines.append(f"vocab.{i}={token}")
    for i, name in enumerate(model.labels.id_to_intent):
        lines.append(f"intent.{i}={name}")
    for i, name in enumerate(model.labels.id_to_slot):
        lines.append(f"slot.{i}={name}")
    offset = 0
    for name in names:
        data = model.params[name].data
        shape = "x".join(str(s) for s in data.shape)
        lines.append(f"tensor.{name}={_DTYPE_TAG};{shape};{offset}")
        offset += data.size * _ITEM_SIZE
    manifest = ("\n".join(lines) + "\n").encode("utf-8")

    out = io.BytesIO()
    out.write(MAGIC + b"\n")
    out.write(str(len(manifest)).encode("ascii") + b"\n")
    out.write(manifest)
    for name in names:
        out.write(np.ascontiguousarray(model.params[name].data,
                                       dtype="<f4").tobytes())
    return out.getvalue()


def save_model(model: Model, path, train_meta: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(model_bytes(model, train_meta))


def _parse_manifest(manifest: str) -> dict:
    entries: dict = {}
    for no, line in enumerate(manifest.splitlines(), start=1):
        if not line:
            continue
        if "=" not in line:
            raise ModelFileError(f"manifest line {no}: missing '='")
        key, value = line.split("=", 1)
        if key in entries:
            raise ModelFileError(f"{key}: duplicate manifest entry")
        entries[key] = value
    return entries


def _take(entries: dict, key: str, convert):
    if key not in entries:
        raise ModelFileError(f"{key}: missing manifest entry")
    raw = entries.pop(key)
    try:
        return convert(raw)
    except ValueError as exc:
        raise ModelFileError(f"{key}: bad value {raw!r}") from exc


def _as_bool(raw: str) -> bool:
    if raw not in ("0", "1"):
        raise ValueError(raw)
    return raw == "1"


def _numbered(entries: dict, prefix: str) -> list:
    """Pop prefix.0, prefix.1, ... and return the values in order."""
    found = {}
    for key in list(entries):
        head, _, tail = key.partition(".")
        if head == prefix and tail.isdigit():
            found[int(tail)] = entries.pop(key)
    items = []
    for i in range(len(found)):
        if i not in found:
            raise ModelFileError(f"{prefix}.{i}: missing manifest entry")
        items.append(found[i])
    if not items:
        raise ModelFileError(f"{prefix}.0: missing manifest entry")
    return items


def model_from_bytes(blob: bytes) -> LoadedModel:
    """Parse the single-file format; raises ModelFileError naming the first
    manifest entry that is missing, malformed or inconsistent."""
    stream = io.BytesIO(blob)
    if stream.readline().rstrip(b"\n") != MAGIC:
        raise ModelFileError("bad magic, not a model file")
    length_line = stream.readline().rstrip(b"\n")
    try:
        manifest_len = int(length_line)
    except ValueError:
        raise ModelFileError("bad manifest length line") from None
    raw_manifest = stream.read(manifest_len)
    if len(raw_manifest) != manifest_len:
        raise ModelFileError("truncated manifest")
    try:
        manifest = raw_manifest.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ModelFileError("manifest is not valid UTF-8") from exc
    payload = stream.read()

    entries = _parse_manifest(manifest)
    enc_config = EncoderConfig(
        vocab_size=_take(entries, "config.vocab_size", int),
        d_model=_take(entries, "config.d_model", int),
        num_blocks=_take(entries, "config.num_blocks", int),
        num_heads=_take(entries, "config.num_heads", int),
        ffn_dim=_take(entries, "config.ffn_dim", int),
        max_positions=_take(entries, "config.max_positions", int),
        dropout_p=_take(entries, "config.dropout_p", float),
        activation=_take(entries, "config.activation", str),
    )
    fan_config = FanConfig(
        heads=_take(entries, "fan.heads", int),
        ffn_dim=_take(entries, "fan.ffn_dim", int),
        use_label_attention=_take(entries, "fan.use_label_attention", _as_bool),
        use_mhsa=_take(entries, "fan.use_mhsa", _as_bool),
        use_ffn=_take(entries, "fan.use_ffn", _as_bool),
        scale_full_d=_take(entries, "fan.scale_full_d", _as_bool),
        dropout_p=_take(entries, "fan.dropout_p", float),
    )
    min_freq = _take(entries, "vocab.min_freq", int)

    tokens = _numbered(entries, "vocab")
    intents = _numbered(entries, "intent")
    slots = _numbered(entries, "slot")
    if len(tokens) != enc_config.vocab_size:
        raise ModelFileError(
            f"vocab.{len(tokens) - 1}: {len(tokens)} tokens but "
            f"config.vocab_size={enc_config.vocab_size}")
    vocab = Vocab({tok: i for i, tok in enumerate(tokens)}, min_freq=min_freq)
    labels = LabelMaps({name: i for i, name in enumerate(intents)},
                       {name: i for i, name in enumerate(slots)})

    train_meta = {}
    tensor_specs = {}
    for key in list(entries):
        if key.startswith("train."):
            train_meta[key[len("train."):]] = entries.pop(key)
        elif key.startswith("tensor."):
            tensor_specs[key[len("tensor."):]] = entries.pop(key)
    if entries:
        stray = sorted(entries)[0]
        raise ModelFileError(f"{stray}: unknown manifest entry")

    params = {}
    spans = []
    for name in sorted(tensor_specs):
        entry = f"tensor.{name}"
        parts = tensor_specs[name].split(";")
        if len(parts) != 3:
            raise ModelFileError(f"{entry}: expected dtype;shape;offset")
        dtype_tag, shape_txt, offset_txt = parts
        if dtype_tag != _DTYPE_TAG:
            raise ModelFileError(f"{entry}: unsupported dtype {dtype_tag!r}")
        try:
            shape = tuple(int(s) for s in shape_txt.split("x"))
            offset = int(offset_txt)
        except ValueError:
            raise ModelFileError(f"{entry}: bad shape or offset") from None
        size = 1
        for s in shape:
            if s < 1:
                raise ModelFileError(f"{entry}: bad dimension {s}")
            size *= s
        end = offset + size * _ITEM_SIZE
        if offset < 0 or end > len(payload):
            raise ModelFileError(f"{entry}: payload span out of bounds")
        spans.append((offset, end, entry))
        data = np.frombuffer(payload, dtype="<f4", count=size,
                             offset=offset).reshape(shape)
        params[name] = Tensor(data.astype(np.float32))

    spans.sort()
    for (_, prev_end, _), (start, _, entry) in zip(spans, spans[1:]):
        if start < prev_end:
            raise ModelFileError(f"{entry}: payload span overlaps previous tensor")

    model = Model(enc_config, fan_config, vocab, labels, params)
    _check_tensor_set(model)
    return LoadedModel(model=model, train_meta=train_meta)


def _expected_shapes(enc: EncoderConfig, fan: FanConfig,
                     ni: int, ns: int) -> dict:
    shapes = {name: shape for name, shape, _ in encoder_param_shapes(enc)}
    d = enc.d_model
    f = resolve_ffn_dim(fan, d)
    if fan.use_label_attention:
        shapes["fan.wa"] = (d, d)
    if fan.use_mhsa:
        for nm in ("fan.wq", "fan.wk", "fan.wv", "fan.wo"):
            shapes[nm] = (d, d)
    shapes["fan.ln.g"] = (d,)
    shapes["fan.ln.b"] = (d,)
    if fan.use_ffn:
        shapes["fan.ffn.w1"] = (d, f)
        shapes["fan.ffn.b1"] = (f,)
        shapes["fan.ffn.w2"] = (f, d)
        shapes["fan.ffn.b2"] = (d,)
    shapes["dec.wi"] = (d, ni)
    shapes["dec.bi"] = (ni,)
    shapes["dec.ws"] = (d, ns)
    shapes["dec.bs"] = (ns,)
    return shapes


def _check_tensor_set(model: Model) -> None:
    """Compare stored tensors against what the configs call for."""
    expected = _expected_shapes(model.enc_config, model.fan_config,
                                model.labels.num_intents,
                                model.labels.num_slots)
    for name, shape in expected.items():
        if name not in model.params:
            raise ModelFileError(f"tensor.{name}: missing manifest entry")
        got = model.params[name].data.shape
        if got != shape:
            raise ModelFileError(
                f"tensor.{name}: shape {got} does not match configs {shape}")
    for name in model.params:
        if name not in expected:
            raise ModelFileError(f"tensor.{name}: unknown manifest entry")


def load_model(path) -> LoadedModel:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc}") from exc
    return model_from_bytes(blob)
