"""Strategy sweeps, aggregate cost reports and the robustness/latency studies."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from dllm_budget import __version__
from dllm_budget.calibration import calibrate, quantile_rank
from dllm_budget.cost_model import ModelConfig
from dllm_budget.dataset import PromptRecord, bimodal_preset, compute_stats, gen_synthetic, partition
from dllm_budget.predictor import TrainConfig, predict_lengths, train
from dllm_budget.strategies import (
    AttemptTrace,
    MaxLength,
    MeanDoubling,
    PredictThenDiffuse,
    SimContext,
    Strategy,
    sample_cost,
    simulate_sample,
)

TFLOP = 10**12
CSV_COLUMNS = (
    "strategy",
    "total_flop",
    "savings_pct",
    "fallback_rate_pct",
    "truncation_rate_pct",
    "mean_attempts",
    "attempts_p99",
)


# Finer leaves and a faster learning rate than the library defaults; the
# benchmark studies need tail lengths resolved to within a few tokens.
BENCH_TRAIN_CONFIG = TrainConfig(rounds=200, max_depth=6, learning_rate=0.3, min_samples_leaf=2)


class HarnessError(ValueError):
    pass


def nearest_rank(values: Sequence[int], q: float) -> int:
    ordered = sorted(values)
    return ordered[quantile_rank(q, len(ordered)) - 1]


@dataclass(frozen=True)
class StrategyResult:
    strategy: str
    total_flop: int
    savings_pct: float
    fallback_rate_pct: float
    truncation_rate_pct: float
    mean_attempts: float
    attempts_p99: int
    single_shot_pct: float
    n_samples: int

    @property
    def total_tflop(self) -> float:
        return self.total_flop / TFLOP

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["total_tflop"] = self.total_tflop
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StrategyResult":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


@dataclass
class BenchmarkReport:
    results: list[StrategyResult]
    metadata: dict = field(default_factory=dict)
    traces: dict[str, list[AttemptTrace]] = field(default_factory=dict, repr=False, compare=False)

    def __getitem__(self, name: str) -> StrategyResult:
        for r in self.results:
            if r.strategy == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"metadata": self.metadata, "results": [r.to_dict() for r in self.results]}

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkReport":
        return cls([StrategyResult.from_dict(r) for r in d["results"]], d.get("metadata", {}))

    def table(self) -> str:
        lines = [f"{'strategy':<10} {'TFLOP':>12} {'savings%':>9} {'fallback%':>10} {'trunc%':>7} {'mean_att':>9} {'p99':>4}"]
        for r in self.results:
            lines.append(
                f"{r.strategy:<10} {r.total_tflop:>12.3f} {r.savings_pct:>9.2f} {r.fallback_rate_pct:>10.2f} "
                f"{r.truncation_rate_pct:>7.2f} {r.mean_attempts:>9.3f} {r.attempts_p99:>4d}"
            )
        return "\n".join(lines)


def aggregate(name: str, traces: Sequence[AttemptTrace], max_total: int | None) -> StrategyResult:
    n = len(traces)
    total = sum(sample_cost(t) for t in traces)
    attempts = [t.n_attempts for t in traces]
    retried = sum(1 for a in attempts if a > 1)
    savings = 0.0 if max_total is None or max_total == 0 else 100.0 * (1.0 - total / max_total)
    return StrategyResult(
        strategy=name,
        total_flop=total,
        savings_pct=savings,
        fallback_rate_pct=100.0 * retried / n,
        truncation_rate_pct=100.0 * sum(t.truncated for t in traces) / n,
        mean_attempts=sum(attempts) / n,
        attempts_p99=nearest_rank(attempts, 0.99),
        single_shot_pct=100.0 * (n - retried) / n,
        n_samples=n,
    )


def _simulate_chunk(args):
    strategy, records, config, ctx = args
    return [simulate_sample(strategy, r, config, ctx) for r in records]


def simulate_all(strategy: Strategy, records: Sequence[PromptRecord], config: ModelConfig, ctx: SimContext, jobs: int = 1) -> list[AttemptTrace]:
    """Traces in record order; ``jobs > 1`` fans chunks out to worker processes."""
    if jobs <= 1 or len(records) < 2 * jobs:
        return [simulate_sample(strategy, r, config, ctx) for r in records]
    size = math.ceil(len(records) / jobs)
    chunks = [(strategy, list(records[i : i + size]), config, ctx) for i in range(0, len(records), size)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(_simulate_chunk, chunks))
    return [t for part in parts for t in part]


def _prepare_context(strategies: Sequence[Strategy], records: Sequence[PromptRecord], ctx: SimContext) -> SimContext:
    if ctx.predictions is not None:
        return ctx
    models = {id(s.model or ctx.model): (s.model or ctx.model) for s in strategies if isinstance(s, PredictThenDiffuse)}
    models = {k: m for k, m in models.items() if m is not None}
    if len(models) != 1:
        return ctx
    (model,) = models.values()
    preds = predict_lengths(model, [r.prompt_text for r in records])
    return SimContext(ctx.train_mean, ctx.model, ctx.delta, ctx.include_prompt, dict(zip((r.id for r in records), preds)))


def run_benchmark(
    strategies: Sequence[Strategy],
    records: Sequence[PromptRecord],
    config: ModelConfig,
    ctx: SimContext | None = None,
    jobs: int = 1,
    seed: int | None = None,
    keep_traces: bool = True,
) -> BenchmarkReport:
    if not records:
        raise HarnessError("empty dataset")
    if not any(isinstance(s, MaxLength) for s in strategies):
        raise HarnessError("MaxLength must be included as the savings baseline")
    names = [s.name for s in strategies]
    if len(set(names)) != len(names):
        raise HarnessError(f"duplicate strategy names: {names}")
    ctx = _prepare_context(strategies, records, ctx or SimContext())

    all_traces = {s.name: simulate_all(s, records, config, ctx, jobs) for s in strategies}
    max_name = next(s.name for s in strategies if isinstance(s, MaxLength))
    max_total = sum(sample_cost(t) for t in all_traces[max_name])
    results = [aggregate(s.name, all_traces[s.name], max_total) for s in strategies]

    stats = compute_stats(records) if len(records) >= 2 else None
    meta = {
        "tool_version": __version__,
        "model_config": config.to_dict(),
        "include_prompt": ctx.include_prompt,
        "delta": ctx.delta,
        "train_mean": ctx.train_mean,
        "seed": seed,
        "dataset_stats": stats.to_dict() if stats else None,
        "strategies": names,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    return BenchmarkReport(results, meta, all_traces if keep_traces else {})


# --- latency determinism ----------------------------------------------------


@dataclass(frozen=True)
class LatencyProfile:
    n: int
    attempt_histogram: dict[int, int]
    single_shot_pct: float
    retry_rate_pct: float
    attempts_p99: int
    attempts_max: int

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["attempt_histogram"] = {str(k): v for k, v in sorted(self.attempt_histogram.items())}
        return d


def latency_profile(traces: Sequence[AttemptTrace]) -> LatencyProfile:
    if not traces:
        raise HarnessError("no traces")
    attempts = [t.n_attempts for t in traces]
    hist = Counter(attempts)
    n = len(attempts)
    single = hist.get(1, 0)
    return LatencyProfile(
        n=n,
        attempt_histogram=dict(sorted(hist.items())),
        single_shot_pct=100.0 * single / n,
        retry_rate_pct=100.0 * (n - single) / n,
        attempts_p99=nearest_rank(attempts, 0.99),
        attempts_max=max(attempts),
    )


# --- bimodal robustness -----------------------------------------------------


@dataclass
class BimodalResult:
    advantage_pct: float
    mean_doubling_flop: int
    ptd_flop: int
    delta: int
    train_mean: float
    long_multi_retry_pct: float  # long-component records needing >= 3 attempts under mean doubling
    report: BenchmarkReport = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "advantage_pct": self.advantage_pct,
            "mean_doubling_flop": self.mean_doubling_flop,
            "ptd_flop": self.ptd_flop,
            "delta": self.delta,
            "train_mean": self.train_mean,
            "long_multi_retry_pct": self.long_multi_retry_pct,
            "report": self.report.to_dict(),
        }


def bimodal_experiment(
    config: ModelConfig,
    seed: int = 0,
    size: int = 5000,
    train_config: TrainConfig | None = None,
    p_safe: float = 0.95,
    long_component: str = "long",
) -> BimodalResult:
    """Mean doubling vs predict-then-diffuse on the 60/40 short/long mixture."""
    records = gen_synthetic(bimodal_preset(size=size, seed=seed))
    part = partition(records, seed)
    model = train(part.fit, config=train_config or BENCH_TRAIN_CONFIG)
    margin = calibrate(model, part.val, p_safe)
    train_mean = float(np.mean([r.response_length for r in part.train]))
    ctx = SimContext(train_mean=train_mean, model=model, delta=margin.delta)
    strategies = [MaxLength(), MeanDoubling(), PredictThenDiffuse()]
    report = run_benchmark(strategies, part.test, config, ctx, seed=seed)
    md, ptd = report["mean"].total_flop, report["ptd"].total_flop
    long_traces = [t for t, r in zip(report.traces["mean"], part.test) if r.component == long_component]
    multi = sum(1 for t in long_traces if t.n_attempts >= 3)
    return BimodalResult(
        advantage_pct=100.0 * (1.0 - ptd / md),
        mean_doubling_flop=md,
        ptd_flop=ptd,
        delta=margin.delta,
        train_mean=train_mean,
        long_multi_retry_pct=100.0 * multi / len(long_traces) if long_traces else 0.0,
        report=report,
    )


# --- export -----------------------------------------------------------------


def report_to_csv(report: BenchmarkReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.results:
        w.writerow([r.strategy, r.total_flop, repr(r.savings_pct), repr(r.fallback_rate_pct), repr(r.truncation_rate_pct), repr(r.mean_attempts), r.attempts_p99])
    return buf.getvalue()


def export_report(report: BenchmarkReport, fmt: str, path) -> None:
    if fmt == "json":
        text = json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    elif fmt == "csv":
        text = report_to_csv(report)
    else:
        raise HarnessError(f"unknown report format {fmt!r} (expected json or csv)")
    path = Path(path)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise HarnessError(f"cannot write report to {path}: {exc.strerror}") from None


def load_report(path) -> BenchmarkReport:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise HarnessError(f"cannot read report {path}: {exc.strerror}") from None
    if path.suffix == ".csv":
        rows = list(csv.DictReader(io.StringIO(text)))
        return BenchmarkReport([_row_to_partial_result(r) for r in rows])
    return BenchmarkReport.from_dict(json.loads(text))


def _row_to_partial_result(row: dict) -> StrategyResult:
    # CSV carries a subset of columns; the rest are filled as NaN / 0
    return StrategyResult(
        strategy=row["strategy"],
        total_flop=int(row["total_flop"]),
        savings_pct=float(row["savings_pct"]),
        fallback_rate_pct=float(row["fallback_rate_pct"]),
        truncation_rate_pct=float(row["truncation_rate_pct"]),
        mean_attempts=float(row["mean_attempts"]),
        attempts_p99=int(row["attempts_p99"]),
        single_shot_pct=float("nan"),
        n_samples=0,
    )
