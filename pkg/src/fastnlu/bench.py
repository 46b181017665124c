"""Per-utterance inference latency harness.

Utterances are fed through the model one at a time (batch size 1).  The
timed region covers framing a single pre-tokenized utterance into a Batch,
the encoder and attention forward passes and the argmax decode; corpus file
I/O and string tokenization stay outside.  Timings come from the monotonic
nanosecond clock and are aggregated in double precision.  Keep BLAS thread
counts pinned (FAN_THREADS) while comparing models.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from time import perf_counter_ns

import numpy as np

from .errors import ConfigError, DataError

# run-to-run coefficient of variation above this triggers a soft warning
COV_WARN_LIMIT = 0.15


@dataclass(frozen=True)
class LatencyReport:
    """Aggregate single-utterance latency statistics for one model."""

    model_name: str
    num_utterances: int
    warmup_count: int
    mean_ms: float
    p50_ms: float
    p95_ms: float
    std_ms: float
    utterances_per_second: float
    speedup_vs_baseline: float | None = None


def measure(model, test_set, warmup: int, repeats: int,
            name: str = "model", max_len: int = 50) -> LatencyReport:
    """Time `repeats` full passes over `test_set` one utterance at a time,
    discarding the first `warmup` timings."""
    if not test_set:
        raise DataError("benchmark needs a non-empty test set")
    if warmup < 0:
        raise ConfigError(f"warmup must be >= 0, got {warmup}")
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    total = repeats * len(test_set)
    if warmup >= total:
        raise ConfigError(
            f"warmup {warmup} leaves no timings from {total} utterances")

    token_lists = [list(u.tokens) for u in test_set]
    timings_ns = np.empty(total, dtype=np.float64)
    pass_mean_ms = []
    i = 0
    for _ in range(repeats):
        start_pass = i
        for tokens in token_lists:
            t0 = perf_counter_ns()
            model.predict_tokens([tokens], max_len)
            timings_ns[i] = perf_counter_ns() - t0
            i += 1
        pass_mean_ms.append(float(timings_ns[start_pass:i].mean()) / 1e6)

    kept_ms = timings_ns[warmup:] / 1e6
    mean_ms = float(kept_ms.mean())
    report = LatencyReport(
        model_name=name,
        num_utterances=len(test_set),
        warmup_count=warmup,
        mean_ms=mean_ms,
        p50_ms=float(np.percentile(kept_ms, 50)),
        p95_ms=float(np.percentile(kept_ms, 95)),
        std_ms=float(kept_ms.std()),
        utterances_per_second=1000.0 / mean_ms,
    )
    if repeats >= 3:
        means = np.asarray(pass_mean_ms)
        cov = float(means.std() / means.mean())
        if cov >= COV_WARN_LIMIT:
            warnings.warn(
                f"{name}: run-to-run latency variation {cov:.1%} exceeds "
                f"{COV_WARN_LIMIT:.0%}; results may be noisy", RuntimeWarning)
    return report


def format_speedup(ratio: float) -> str:
    return f"{ratio:.1f}x"


def compare(reports: list, baseline_name: str) -> list:
    """Fill speedup_vs_baseline = baseline_mean / model_mean on every report."""
    by_name = {r.model_name: r for r in reports}
    if baseline_name not in by_name:
        known = ", ".join(sorted(by_name)) or "none"
        raise ConfigError(
            f"unknown baseline {baseline_name!r}; measured models: {known}")
    base = by_name[baseline_name].mean_ms
    return [replace(r, speedup_vs_baseline=base / r.mean_ms) for r in reports]


def reports_csv(reports: list) -> str:
    """Machine-readable dump with every aggregate column."""
    lines = ["model,utterances,warmup,mean_ms,p50_ms,p95_ms,std_ms,"
             "utterances_per_second,speedup"]
    for r in reports:
        speedup = "" if r.speedup_vs_baseline is None \
            else f"{r.speedup_vs_baseline:.6f}"
        lines.append(
            f"{r.model_name},{r.num_utterances},{r.warmup_count},"
            f"{r.mean_ms:.6f},{r.p50_ms:.6f},{r.p95_ms:.6f},{r.std_ms:.6f},"
            f"{r.utterances_per_second:.6f},{speedup}")
    return "\n".join(lines) + "\n"


def reports_table(reports: list) -> str:
    """Aligned text table: model, mean latency in ms, speedup ratio."""
    header = ("Model", "Latency (ms)", "Speedup")
    rows = [header]
    for r in reports:
        speedup = "-" if r.speedup_vs_baseline is None \
            else format_speedup(r.speedup_vs_baseline)
        rows.append((r.model_name, f"{r.mean_ms:.1f}", speedup))
    widths = [max(len(row[c]) for row in rows) for c in range(len(header))]
    lines = []
    for row in rows:
        cells = [row[0].ljust(widths[0])]
        cells += [row[c].rjust(widths[c]) for c in range(1, len(header))]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"
