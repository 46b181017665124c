"""Acceptance gate: one test per shipped guarantee, one pass/fail line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the criterion lines.
Each check pins its tolerance in the assertion itself; the shared helpers
come from the per-module suites (the finite-difference oracle and the
brute-force chunk matcher are independent of the code under test).
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from fastnlu.attention import (
    FanConfig,
    fan_forward,
    fan_param_count,
    init_fan_params,
    label_attention,
)
from fastnlu.bench import format_speedup, measure
from fastnlu.data import (
    RESERVED_TOKENS,
    LabelMaps,
    Utterance,
    Vocab,
    build_label_maps,
    build_vocab,
    encode_batch,
    load_split,
)
from fastnlu.decoder import joint_loss
from fastnlu.encoder import EncoderConfig, encode
from fastnlu.metrics import slot_f1
from fastnlu.model import Model
from fastnlu.modelfile import load_model, save_model
from fastnlu.rng import Rng
from fastnlu.synthetic import generate_utterances
from fastnlu.tensor import LN_EPS
from fastnlu.trainer import TrainConfig, evaluate_model, train
from gradcheck import max_rel_err, numeric_grad
from test_metrics import brute_prf, random_tags

SPLITS = generate_utterances()


def check(num: int, description: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {num}: {'PASS' if ok else 'FAIL'} {description}"
    if detail:
        line += f" [{detail}]"
    print(line)
    assert ok, line


def randomize(model: Model, seed: int = 55) -> None:
    """Lift parameter magnitudes above the finite-difference noise floor."""
    rng = Rng(seed)
    for name, t in model.params.items():
        if name.endswith(".g"):
            t.data = (1.0 + 0.2 * rng.normal(t.shape)).astype(t.dtype)
        else:
            t.data = rng.normal(t.shape, std=0.4).astype(t.dtype)


def tiny_world(dtype=np.float64):
    """d=8, one block, 2 heads, content length 5, 3 intents, 5 slot tags."""
    words = ("find", "fish", "story", "play", "rain", "in", "paris")
    token_to_id = {t: i for i, t in enumerate(RESERVED_TOKENS)}
    for w in words:
        token_to_id[w] = len(token_to_id)
    vocab = Vocab(token_to_id, min_freq=1)
    labels = LabelMaps(
        intent_to_id={"A": 0, "B": 1, "C": 2},
        slot_to_id={"O": 0, "B-x": 1, "I-x": 2, "B-y": 3, "I-y": 4},
    )
    enc = EncoderConfig(vocab_size=len(vocab), d_model=8, num_blocks=1,
                        num_heads=2, max_positions=7, dropout_p=0.0)
    fan = FanConfig(heads=2, dropout_p=0.0)
    model = Model.build(enc, fan, vocab, labels, seed=11, dtype=dtype)
    utts = [
        Utterance(("find", "fish", "story", "rain", "paris"), "A",
                  ("O", "B-x", "I-x", "O", "B-y")),
        Utterance(("play", "rain", "in"), "B", ("B-y", "O", "O")),
    ]
    batch = encode_batch(utts, vocab, labels, max_len=5)
    return model, batch


def test_criterion_1_gradient_correctness():
    started = time.perf_counter()
    model, batch = tiny_world(dtype=np.float64)
    randomize(model)
    lam = 0.4

    def loss():
        h_i, h_s, _ = model.forward(batch)
        value, _ = joint_loss(h_i, h_s, model.params, batch.gold_intents,
                              batch.gold_slots, lam)
        return value

    model.loss_and_grads(batch, lam)
    assert "dec.wi" in model.params and "dec.ws" in model.params
    worst, worst_name = 0.0, ""
    for name, tensor in model.params.items():
        rel = max_rel_err(tensor.grad, numeric_grad(loss, tensor.data))
        if rel > worst:
            worst, worst_name = rel, name
    elapsed = time.perf_counter() - started
    check(1, f"analytic gradient of the joint loss matches central finite "
             f"differences for all {len(model.params)} tensors "
             f"(rel err < 1e-4, < 60 s)",
          worst < 1e-4 and elapsed < 60.0,
          f"max rel err {worst:.2e} at {worst_name}, {elapsed:.1f}s")


def test_criterion_2_pinned_intermediates():
    model, batch = tiny_world(dtype=np.float64)
    randomize(model, seed=77)
    h, _ = encode(model.params, model.enc_config, batch.token_ids,
                  batch.attention_mask)
    h_i, h_s, cache = fan_forward(h, model.params, model.fan_config,
                                  batch.attention_mask)

    alpha = cache["la"]["alpha"]
    alpha_ok = np.allclose(alpha.sum(axis=-1), 1.0, atol=1e-6)

    eye = np.eye(8)
    zero_i, zero_s = np.zeros((8, 3)), np.zeros((8, 5))
    h_a, _ = label_attention(h, zero_i, zero_s, eye)
    identity_ok = np.allclose(h_a, h, rtol=0.0, atol=1e-12)

    probs = cache["mh"]["probs"]
    probs_ok = np.allclose(probs.sum(axis=-1), 1.0, atol=1e-6)

    h_m = cache["mh"]["ctx"] @ model.params["fan.wo"].data
    z = h + h_m
    mu = z.mean(axis=-1, keepdims=True)
    var = z.var(axis=-1, keepdims=True)
    h_l_recomputed = ((z - mu) / np.sqrt(var + LN_EPS)
                      * model.params["fan.ln.g"].data
                      + model.params["fan.ln.b"].data)
    ln_ok = np.allclose(h_l_recomputed, cache["ffn"]["h_l"],
                        rtol=0.0, atol=1e-10)

    check(2, "label-attention rows sum to 1, zero-weight identity holds, "
             "self-attention rows sum to 1, and the layer-norm residual "
             "recomputes exactly",
          alpha_ok and identity_ok and probs_ok and ln_ok,
          f"alpha={alpha_ok} identity={identity_ok} probs={probs_ok} ln={ln_ok}")


def test_criterion_3_ablation_parameter_deltas():
    d = f = 312
    full = FanConfig(heads=12, ffn_dim=f)
    base = fan_param_count(full, d)
    delta_la = base - fan_param_count(
        FanConfig(heads=12, ffn_dim=f, use_label_attention=False), d)
    delta_mh = base - fan_param_count(
        FanConfig(heads=12, ffn_dim=f, use_mhsa=False), d)
    delta_ffn = base - fan_param_count(
        FanConfig(heads=12, ffn_dim=f, use_ffn=False), d)
    materialized = sum(t.size for t in
                       init_fan_params(full, d, Rng(0)).values())
    ok = (delta_la == d * d
          and delta_mh == 4 * d * d
          and delta_ffn == d * f + f + f * d + d
          and materialized == base)
    check(3, "each ablation removes exactly its documented parameter count "
             "at d=312, h=12, f=312",
          ok, f"label-attn -{delta_la}, mhsa -{delta_mh}, ffn -{delta_ffn}")


@pytest.fixture(scope="module")
def overfit():
    """Criterion 4 training run, shared with the serialization criterion."""
    utts = SPLITS["train"][:32]
    vocab = build_vocab(SPLITS["train"])
    labels = build_label_maps(SPLITS["train"])
    enc = EncoderConfig(vocab_size=len(vocab), d_model=32, num_blocks=1,
                        num_heads=2, max_positions=52, dropout_p=0.0)
    fan = FanConfig(heads=2, dropout_p=0.0)
    model = Model.build(enc, fan, vocab, labels, seed=2)
    config = TrainConfig(learning_rate=3e-3, batch_size=32, max_epochs=300,
                         seed=2, patience=300)
    started = time.perf_counter()
    train(model, utts, utts, config)
    elapsed = time.perf_counter() - started
    report = evaluate_model(model, utts, batch_size=32, max_len=50)
    return model, utts, report, elapsed


def test_criterion_4_overfit_oracle(overfit):
    _, _, report, elapsed = overfit
    check(4, "32 synthetic utterances overfit to >= 99% training semantic "
             "accuracy within 300 epochs in under 2 minutes",
          report.semantic_accuracy >= 0.99 and elapsed < 120.0,
          f"semantic {report.semantic_accuracy:.4f}, {elapsed:.1f}s")


def test_criterion_5_metrics_against_brute_force():
    rng = Rng(99)
    disagreements = 0
    for _ in range(1000):
        gold, pred = random_tags(rng), random_tags(rng)
        n = min(len(gold), len(pred))
        gold, pred = gold[:n], pred[:n]
        if slot_f1([gold], [pred]) != brute_prf([gold], [pred]):
            disagreements += 1
    check(5, "slot F1 agrees exactly with the independent brute-force chunk "
             "matcher on 1000 random tag-sequence pairs",
          disagreements == 0, f"{disagreements} disagreements")


ATIS_DIR = Path(os.environ.get("FAN_ATIS_DIR", "data/atis"))


def _atis_valid_dir():
    for name in ("valid", "dev"):
        if (ATIS_DIR / name / "seq.in").is_file():
            return ATIS_DIR / name
    return None


def _atis_present() -> bool:
    return ((ATIS_DIR / "train" / "seq.in").is_file()
            and (ATIS_DIR / "test" / "seq.in").is_file()
            and _atis_valid_dir() is not None)


@pytest.mark.skipif(not _atis_present(),
                    reason="ATIS corpus not found (set FAN_ATIS_DIR or put it "
                           "under data/atis)")
def test_criterion_6_from_scratch_atis():
    started = time.perf_counter()
    train_utts = load_split(ATIS_DIR / "train")
    valid_utts = load_split(_atis_valid_dir())
    test_utts = load_split(ATIS_DIR / "test")
    vocab = build_vocab(train_utts)
    labels = build_label_maps(train_utts)
    enc = EncoderConfig(vocab_size=len(vocab), d_model=312, num_blocks=4,
                        num_heads=12, max_positions=52, dropout_p=0.1)
    fan = FanConfig(heads=12, dropout_p=0.1)
    model = Model.build(enc, fan, vocab, labels, seed=0)
    config = TrainConfig(learning_rate=3e-4, batch_size=32, max_epochs=50,
                         seed=0, patience=12)
    train(model, train_utts, valid_utts, config)
    report = evaluate_model(model, test_utts, batch_size=64, max_len=50)
    elapsed = time.perf_counter() - started
    check(6, "from-scratch ATIS training reaches intent acc >= 90% and "
             "slot F1 >= 85% within 50 epochs",
          report.intent_accuracy >= 0.90 and report.slot_f1 >= 0.85
          and elapsed < 45 * 60,
          f"intent {report.intent_accuracy:.4f}, slot F1 {report.slot_f1:.4f}, "
          f"{elapsed / 60:.1f} min")


def test_criterion_7_fan_vs_ablated_baseline():
    vocab = build_vocab(SPLITS["train"])
    labels = build_label_maps(SPLITS["train"])

    def run(seed: int, full: bool) -> float:
        enc = EncoderConfig(vocab_size=len(vocab), d_model=48, num_blocks=1,
                            num_heads=2, max_positions=52, dropout_p=0.1)
        fan = FanConfig(heads=2, dropout_p=0.1, use_label_attention=full,
                        use_mhsa=full, use_ffn=full)
        model = Model.build(enc, fan, vocab, labels, seed=seed)
        config = TrainConfig(learning_rate=3e-3, batch_size=32, max_epochs=40,
                             seed=seed, patience=40)
        train(model, SPLITS["train"], SPLITS["valid"], config)
        return evaluate_model(model, SPLITS["test"], batch_size=64,
                              max_len=50).semantic_accuracy

    seeds = (0, 1, 2)
    fan_mean = sum(run(s, True) for s in seeds) / len(seeds)
    base_mean = sum(run(s, False) for s in seeds) / len(seeds)
    check(7, "full model's held-out semantic accuracy >= the all-ablated "
             "baseline's, averaged over 3 seeds",
          fan_mean >= base_mean,
          f"full {fan_mean:.4f} vs baseline {base_mean:.4f}")


def test_criterion_8_latency_ordering_and_speedup_format():
    vocab = build_vocab(SPLITS["train"])
    labels = build_label_maps(SPLITS["train"])
    shapes = (("tiny-shape", 4, 312), ("distil-shape", 6, 768),
              ("bert-shape", 12, 768))
    means = []
    for name, blocks, d in shapes:
        enc = EncoderConfig(vocab_size=len(vocab), d_model=d,
                            num_blocks=blocks, num_heads=12,
                            max_positions=52, dropout_p=0.0)
        model = Model.build(enc, FanConfig(heads=12, dropout_p=0.0),
                            vocab, labels, seed=0)
        report = measure(model, SPLITS["test"][:8], warmup=2, repeats=1,
                         name=name)
        means.append(report.mean_ms)
    ordered = means[0] < means[1] < means[2]
    formatted = format_speedup(351.0 / 66.8)
    check(8, "mean latency is strictly ordered tiny < distil-like < "
             "bert-like and 351.0/66.8 formats as \"5.3x\"",
          ordered and formatted == "5.3x",
          f"means {means[0]:.1f}/{means[1]:.1f}/{means[2]:.1f} ms, "
          f"speedup {formatted}")


def test_criterion_9_serialization_round_trip(overfit, tmp_path):
    model, utts, report, _ = overfit
    first = tmp_path / "a.fan"
    second = tmp_path / "b.fan"
    save_model(model, first, {"note": "overfit"})
    loaded = load_model(first)
    save_model(loaded.model, second, loaded.train_meta)
    bytes_ok = first.read_bytes() == second.read_bytes()

    reloaded = evaluate_model(loaded.model, utts, batch_size=32, max_len=50)
    metrics_ok = (
        reloaded.intent_accuracy == report.intent_accuracy
        and reloaded.slot_precision == report.slot_precision
        and reloaded.slot_recall == report.slot_recall
        and reloaded.slot_f1 == report.slot_f1
        and reloaded.semantic_accuracy == report.semantic_accuracy
        and np.array_equal(reloaded.intent_confusion, report.intent_confusion)
    )
    check(9, "save -> load -> save is byte-identical and reloaded metrics "
             "are exactly identical",
          bytes_ok and metrics_ok,
          f"bytes {'equal' if bytes_ok else 'differ'}, metrics "
          f"{'equal' if metrics_ok else 'differ'}")
