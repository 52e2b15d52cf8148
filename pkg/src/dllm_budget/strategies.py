"""Canvas-sizing strategies and per-sample retry simulation.

An attempt with response canvas ``L`` succeeds iff ``L >= k``; this stands in
for the model emitting an end-of-sequence token inside the canvas. Every
attempt, failed or not, is charged its full inference FLOP.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

from dllm_budget.calibration import effective_length
from dllm_budget.cost_model import ModelConfig, total_inference_flop
from dllm_budget.dataset import PromptRecord, default_tokenize, round_half_away
from dllm_budget.predictor import GbdtModel, predict_length


class StrategyError(ValueError):
    pass


@dataclass(frozen=True)
class MaxLength:
    name: str = "max"


@dataclass(frozen=True)
class StaticDoubling:
    initial: int = 200
    name: str = "static"

    def __post_init__(self):
        if self.initial < 1:
            raise StrategyError("initial length must be >= 1")


@dataclass(frozen=True)
class MeanDoubling:
    """Starts at the (rounded) training-set mean; ``None`` reads it from context."""

    mean: int | None = None
    name: str = "mean"

    def __post_init__(self):
        if self.mean is not None and self.mean < 1:
            raise StrategyError("mean length must be >= 1")


@dataclass(frozen=True)
class PredictThenDiffuse:
    """Predicted length plus margin; one fallback straight to ``L_max``."""

    model: GbdtModel | None = field(default=None, compare=False, repr=False)
    delta: int | None = None
    name: str = "ptd"


@dataclass(frozen=True)
class Oracle:
    name: str = "oracle"


Strategy = Union[MaxLength, StaticDoubling, MeanDoubling, PredictThenDiffuse, Oracle]

STRATEGY_NAMES = ("max", "static", "mean", "ptd", "oracle")


@dataclass
class SimContext:
    """Shared inputs for a simulation run.

    ``predictions`` caches predicted lengths by record id so a sweep does not
    re-featurize prompts per strategy.
    """

    train_mean: float | None = None
    model: GbdtModel | None = None
    delta: int | None = None
    include_prompt: bool = False
    predictions: Mapping[str, int] | None = None


@dataclass(frozen=True)
class AttemptTrace:
    record_id: str
    strategy: str
    true_length: int
    attempted_lengths: tuple[int, ...]
    attempt_flops: tuple[int, ...]
    truncated: bool

    @property
    def fallback_count(self) -> int:
        return len(self.attempted_lengths) - 1

    @property
    def final_length(self) -> int:
        return self.attempted_lengths[-1]

    @property
    def n_attempts(self) -> int:
        return len(self.attempted_lengths)

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "strategy": self.strategy,
            "true_length": self.true_length,
            "attempted_lengths": list(self.attempted_lengths),
            "attempt_flops": list(self.attempt_flops),
            "fallback_count": self.fallback_count,
            "truncated": self.truncated,
            "final_length": self.final_length,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttemptTrace":
        return cls(
            str(d["record_id"]),
            d["strategy"],
            int(d["true_length"]),
            tuple(int(v) for v in d["attempted_lengths"]),
            tuple(int(v) for v in d["attempt_flops"]),
            bool(d["truncated"]),
        )


def _predicted(strategy: PredictThenDiffuse, record: PromptRecord, ctx: SimContext) -> int:
    if ctx.predictions is not None and record.id in ctx.predictions:
        return ctx.predictions[record.id]
    model = strategy.model or ctx.model
    if model is None:
        raise StrategyError("PredictThenDiffuse needs a trained model")
    return predict_length(model, record.prompt_text)


def plan_initial(strategy: Strategy, record: PromptRecord, l_max: int, ctx: SimContext | None = None) -> int:
    ctx = ctx or SimContext()
    if isinstance(strategy, MaxLength):
        return l_max
    if isinstance(strategy, StaticDoubling):
        return min(strategy.initial, l_max)
    if isinstance(strategy, MeanDoubling):
        mean = strategy.mean
        if mean is None:
            if ctx.train_mean is None:
                raise StrategyError("MeanDoubling needs the training-set mean")
            mean = max(1, round_half_away(ctx.train_mean))
        return min(mean, l_max)
    if isinstance(strategy, PredictThenDiffuse):
        delta = strategy.delta if strategy.delta is not None else ctx.delta
        if delta is None:
            raise StrategyError("PredictThenDiffuse needs a calibrated delta")
        return effective_length(_predicted(strategy, record, ctx), delta, l_max)
    if isinstance(strategy, Oracle):
        return min(record.response_length, l_max)
    raise StrategyError(f"unknown strategy {strategy!r}")


def _next_length(strategy: Strategy, L: int, l_max: int) -> int | None:
    if isinstance(strategy, (StaticDoubling, MeanDoubling)):
        return min(2 * L, l_max)
    if isinstance(strategy, PredictThenDiffuse):
        return l_max
    return None


def simulate_sample(strategy: Strategy, record: PromptRecord, config: ModelConfig, ctx: SimContext | None = None) -> AttemptTrace:
    ctx = ctx or SimContext()
    l_max = config.max_response_len
    k = record.response_length
    prompt_tokens = default_tokenize(record.prompt_text) if ctx.include_prompt else 0
    lengths, flops = [], []
    L = plan_initial(strategy, record, l_max, ctx)
    truncated = False
    while True:
        lengths.append(L)
        flops.append(total_inference_flop(config, L + prompt_tokens))
        if L >= k:
            break
        nxt = _next_length(strategy, L, l_max)
        if L >= l_max or nxt is None:
            truncated = L >= l_max
            break
        L = nxt
    if not truncated and L < k:
        # only reachable for strategies that never retry yet started below k
        raise StrategyError(f"{strategy.name} stopped below the true length without reaching L_max")
    return AttemptTrace(record.id, strategy.name, k, tuple(lengths), tuple(flops), truncated)


def sample_cost(trace: AttemptTrace) -> int:
    return sum(trace.attempt_flops)


def write_traces_jsonl(traces: Iterable[AttemptTrace], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in traces:
            fh.write(json.dumps(t.to_dict(), sort_keys=True))
            fh.write("\n")


def read_traces_jsonl(path) -> list[AttemptTrace]:
    with open(path, encoding="utf-8") as fh:
        return [AttemptTrace.from_dict(json.loads(line)) for line in fh if line.strip()]
