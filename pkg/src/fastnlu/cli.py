"""Command-line surface: train, eval, predict, bench, make-synth.

Every flag can also be supplied through a flat key=value config file
(--config); an explicit flag wins over the file, the file wins over the
built-in default.  Exit codes: 0 success, 1 usage error, 2 data or model
file error, 3 internal numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

from .attention import FanConfig
from .bench import compare, measure, reports_csv, reports_table
from .data import build_label_maps, build_vocab, load_split
from .encoder import EncoderConfig
from .errors import ConfigError, DataError, FastNLUError
from .figures import (
    save_confusion_matrix,
    save_history_curves,
    save_latency_chart,
)
from .model import Model
from .modelfile import load_model, save_model
from .synthetic import DEFAULT_SEED, DEFAULT_SIZES, write_corpus
from .trainer import TrainConfig, evaluate_model, history_csv, train

ABLATION_STAGES = ("label-attn", "mhsa", "ffn")

_TC = TrainConfig()


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; we reserve 2 for data
    problems, so usage failures are rethrown and mapped to exit 1."""

    def error(self, message):
        raise ConfigError(message)


def parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


@dataclass(frozen=True)
class Flag:
    """One CLI option plus its config-file spelling."""

    name: str                  # "--encoder-blocks"
    convert: type = str
    default: object = None
    help: str = ""
    dest: str = ""
    repeatable: bool = False
    boolean: bool = False
    choices: tuple = ()
    required: bool = False

    @property
    def key(self) -> str:
        return self.name.lstrip("-")

    @property
    def attr(self) -> str:
        return self.dest or self.key.replace("-", "_")

    def add_to(self, parser) -> None:
        kw: dict = {"default": None, "help": self.help}
        if self.dest:
            kw["dest"] = self.dest
        if self.boolean:
            kw["action"] = "store_true"
        else:
            kw["type"] = self.convert
            if self.choices:
                kw["choices"] = self.choices
            if self.repeatable:
                kw["action"] = "append"
        parser.add_argument(self.name, **kw)

    def from_text(self, text: str):
        if self.boolean:
            return parse_bool(text)
        if self.repeatable:
            items = [s.strip() for s in text.split(",") if s.strip()]
            values = [self.convert(s) for s in items]
        else:
            values = [self.convert(text)]
        for v in values:
            if self.choices and v not in self.choices:
                raise ConfigError(
                    f"{self.key}: {v!r} is not one of {', '.join(self.choices)}")
        return values if self.repeatable else values[0]


def parse_config_file(path) -> dict:
    """Flat key=value lines; blank lines and # comments are ignored."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    values: dict = {}
    for no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{no}: expected key=value")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key in values:
            raise ConfigError(f"{path}:{no}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def resolve(flags: list, args) -> dict:
    """Merge flag > config-file > default and enforce required options."""
    file_values = {}
    if getattr(args, "config", None):
        file_values = parse_config_file(args.config)
        known = {f.key for f in flags}
        for key in file_values:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
    out = {}
    for flag in flags:
        value = getattr(args, flag.attr)
        if value is None and flag.key in file_values:
            value = flag.from_text(file_values[flag.key])
        if value is None:
            value = flag.default
        if value is None and flag.required:
            raise ConfigError(f"missing required option {flag.name}")
        out[flag.attr] = value
    return out


TRAIN_FLAGS = [
    Flag("--data-dir", required=True, help="corpus root with train/ and valid/"),
    Flag("--out", default="model.fan", help="checkpoint output path"),
    Flag("--encoder-blocks", int, 4, "transformer blocks in the encoder"),
    Flag("--hidden", int, 312, "model width d"),
    Flag("--heads", int, 12, "attention heads (encoder and fan)"),
    Flag("--lambda", float, _TC.lam, "intent loss weight in (0,1)", dest="lam"),
    Flag("--lr", float, _TC.learning_rate, "Adam learning rate"),
    Flag("--batch-size", int, _TC.batch_size, "utterances per step"),
    Flag("--epochs", int, _TC.max_epochs, "maximum training epochs"),
    Flag("--seed", int, _TC.seed, "seed for init, shuffling and dropout"),
    Flag("--max-len", int, _TC.max_len, "content tokens kept per utterance"),
    Flag("--patience", int, _TC.patience, "epochs without improvement before stop"),
    Flag("--min-freq", int, 1, "minimum token frequency kept in the vocabulary"),
    Flag("--dropout", float, 0.1, "dropout probability"),
    Flag("--ablate", repeatable=True, choices=ABLATION_STAGES, default=[],
         help="disable a stage (repeatable)"),
    Flag("--scale-full-d", boolean=True, default=False,
         help="divide attention scores by sqrt(d) instead of sqrt(d/h)"),
    Flag("--report-dir", help="where history.csv and figures go (default: model dir)"),
]

EVAL_FLAGS = [
    Flag("--model", required=True, help="checkpoint to evaluate"),
    Flag("--data-dir", required=True, help="corpus root"),
    Flag("--split", default="test", choices=("train", "valid", "test")),
    Flag("--batch-size", int, 64, "evaluation batch size"),
    Flag("--max-len", int, help="override content length (default from model)"),
    Flag("--out", default="reports", help="directory for report files"),
]

PREDICT_FLAGS = [
    Flag("--model", required=True, help="checkpoint to predict with"),
    Flag("--max-len", int, help="override content length (default from model)"),
]

BENCH_FLAGS = [
    Flag("--model", repeatable=True, required=True,
         help="checkpoint to time (repeatable)"),
    Flag("--data-dir", required=True, help="corpus root"),
    Flag("--split", default="test", choices=("train", "valid", "test")),
    Flag("--warmup", int, 5, "initial timings to discard"),
    Flag("--repeats", int, 3, "full passes over the split"),
    Flag("--baseline", help="model name for speedups (default: slowest)"),
    Flag("--max-len", int, help="override content length (default from model)"),
    Flag("--out", default="reports", help="directory for report files"),
]

SYNTH_FLAGS = [
    Flag("--out", required=True, help="corpus root to create"),
    Flag("--seed", int, DEFAULT_SEED, "generator seed"),
    Flag("--train", int, DEFAULT_SIZES["train"], "training utterances"),
    Flag("--valid", int, DEFAULT_SIZES["valid"], "validation utterances"),
    Flag("--test", int, DEFAULT_SIZES["test"], "test utterances"),
]


def _ensure_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _confusion_csv(report) -> str:
    lines = ["gold," + ",".join(report.intent_labels)]
    for label, row in zip(report.intent_labels, report.intent_confusion):
        lines.append(label + "," + ",".join(str(int(c)) for c in row))
    return "\n".join(lines) + "\n"


def cmd_train(opt: dict) -> int:
    data_dir = Path(opt["data_dir"])
    train_utts = load_split(data_dir / "train")
    valid_utts = load_split(data_dir / "valid")
    vocab = build_vocab(train_utts, min_freq=opt["min_freq"])
    labels = build_label_maps(train_utts)
    ablated = set(opt["ablate"] or [])

    enc_config = EncoderConfig(
        vocab_size=len(vocab), d_model=opt["hidden"],
        num_blocks=opt["encoder_blocks"], num_heads=opt["heads"],
        max_positions=opt["max_len"] + 2, dropout_p=opt["dropout"])
    fan_config = FanConfig(
        heads=opt["heads"],
        use_label_attention="label-attn" not in ablated,
        use_mhsa="mhsa" not in ablated,
        use_ffn="ffn" not in ablated,
        scale_full_d=opt["scale_full_d"],
        dropout_p=opt["dropout"])
    train_config = TrainConfig(
        learning_rate=opt["lr"], batch_size=opt["batch_size"],
        max_epochs=opt["epochs"], lam=opt["lam"], max_len=opt["max_len"],
        seed=opt["seed"], patience=opt["patience"])

    model = Model.build(enc_config, fan_config, vocab, labels, seed=opt["seed"])
    print(f"training on {len(train_utts)} utterances, "
          f"{model.param_count():,} parameters")
    result = train(model, train_utts, valid_utts, train_config)

    out = Path(opt["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    meta = {k: str(v) for k, v in asdict(train_config).items()}
    meta["best_epoch"] = str(result.best_epoch)
    save_model(model, out, meta)

    report_dir = _ensure_dir(opt["report_dir"] or out.parent)
    (report_dir / "history.csv").write_text(history_csv(result.history))
    save_history_curves(result.history, report_dir / "history.png")

    if result.stopped_early:
        print(f"stopped early after epoch {len(result.history)}")
    print(f"best epoch {result.best_epoch}: {result.best_report.headline()}")
    print(f"model written to {out}")
    return 0


def cmd_eval(opt: dict) -> int:
    model = load_model(opt["model"]).model
    utts = load_split(Path(opt["data_dir"]) / opt["split"])
    max_len = opt["max_len"] or model.enc_config.max_positions - 2
    report = evaluate_model(model, utts, batch_size=opt["batch_size"],
                            max_len=max_len)
    print(report.headline())
    print(report.to_kv_text(), end="")

    out_dir = _ensure_dir(opt["out"])
    (out_dir / "eval.kv").write_text(report.to_kv_text())
    (out_dir / "confusion.csv").write_text(_confusion_csv(report))
    save_confusion_matrix(report.intent_confusion, report.intent_labels,
                          out_dir / "confusion.png")
    print(f"report files in {out_dir}")
    return 0


def cmd_predict(opt: dict) -> int:
    model = load_model(opt["model"]).model
    max_len = opt["max_len"] or model.enc_config.max_positions - 2
    for no, line in enumerate(sys.stdin, start=1):
        tokens = line.lower().split()
        if not tokens:
            print(f"warning: line {no}: empty line skipped", file=sys.stderr)
            continue
        preds, truncated = model.predict_tokens([tokens], max_len)
        if truncated:
            print(f"warning: line {no}: truncated to {max_len} tokens",
                  file=sys.stderr)
        pred = preds[0]
        pairs = " ".join(f"{tok}:{tag}"
                         for tok, tag in zip(tokens, pred.slots))
        print(f"{pred.intent}\t{pairs}")
    return 0


def cmd_bench(opt: dict) -> int:
    utts = load_split(Path(opt["data_dir"]) / opt["split"])
    reports = []
    used_names: set = set()
    for path in opt["model"]:
        name = Path(path).stem
        if name in used_names:
            name = str(path)
        used_names.add(name)
        model = load_model(path).model
        max_len = opt["max_len"] or model.enc_config.max_positions - 2
        reports.append(measure(model, utts, warmup=opt["warmup"],
                               repeats=opt["repeats"], name=name,
                               max_len=max_len))
    baseline = opt["baseline"] or max(reports, key=lambda r: r.mean_ms).model_name
    reports = compare(reports, baseline)

    print(reports_table(reports), end="")
    out_dir = _ensure_dir(opt["out"])
    (out_dir / "bench.csv").write_text(reports_csv(reports))
    save_latency_chart(reports, out_dir / "bench.png")
    print(f"report files in {out_dir}")
    return 0


def cmd_make_synth(opt: dict) -> int:
    sizes = {"train": opt["train"], "valid": opt["valid"], "test": opt["test"]}
    summary = write_corpus(opt["out"], seed=opt["seed"], sizes=sizes)
    counts = ", ".join(f"{name}={n}" for name, n in summary.counts.items())
    print(f"wrote {counts} under {opt['out']} "
          f"({len(summary.intents)} intents, {len(summary.slot_tags)} slot tags)")
    return 0


_COMMANDS = [
    ("train", cmd_train, TRAIN_FLAGS, "train a model from a corpus"),
    ("eval", cmd_eval, EVAL_FLAGS, "score a checkpoint on a split"),
    ("predict", cmd_predict, PREDICT_FLAGS,
     "tag utterances read from standard input"),
    ("bench", cmd_bench, BENCH_FLAGS, "measure per-utterance latency"),
    ("make-synth", cmd_make_synth, SYNTH_FLAGS,
     "generate the synthetic corpus"),
]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fastnlu",
                     description="joint intent detection and slot filling")
    subparsers = parser.add_subparsers(dest="command")
    for name, func, flags, help_text in _COMMANDS:
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", default=None,
                         help="key=value file; explicit flags win")
        for flag in flags:
            flag.add_to(sub)
        sub.set_defaults(func=func, flags=flags)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            parser.print_usage(sys.stderr)
            return 1
        return args.func(resolve(args.flags, args))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FastNLUError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
