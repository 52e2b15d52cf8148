"""Safety margin from under-prediction residuals, and the effective canvas length."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from dllm_budget.dataset import PromptRecord
from dllm_budget.predictor import GbdtModel, predict_lengths

MARGIN_FORMAT = "dllm-budget/margin"


@dataclass(frozen=True)
class SafetyMargin:
    delta: int
    p_safe: float
    residual_count: int
    source_split: str = "validation"

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if not 0.0 < self.p_safe <= 1.0:
            raise ValueError("p_safe must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "format": MARGIN_FORMAT,
            "delta": self.delta,
            "p_safe": self.p_safe,
            "residual_count": self.residual_count,
            "source_split": self.source_split,
        }


def residuals_from_pairs(truth: Sequence[int], predicted: Sequence[int]) -> list[int]:
    return [k - p for k, p in zip(truth, predicted) if k > p]


def positive_residuals(model: GbdtModel, records: Sequence[PromptRecord]) -> list[int]:
    preds = predict_lengths(model, [r.prompt_text for r in records])
    return residuals_from_pairs([r.response_length for r in records], preds)


def quantile_rank(p_safe: float, n: int) -> int:
    """1-based nearest-rank-upper index ``ceil(p_safe * n)``.

    ``p_safe`` is read as the decimal it prints as, so 0.95 * 100 is 95 and
    not 95.00000000000001.
    """
    return max(1, math.ceil(Fraction(repr(float(p_safe))) * n))


def compute_delta(residuals: Sequence[int], p_safe: float) -> int:
    if not 0.0 < p_safe <= 1.0:
        raise ValueError(f"p_safe must be in (0, 1], got {p_safe}")
    if not residuals:
        return 0
    ordered = sorted(residuals)
    return max(0, int(ordered[quantile_rank(p_safe, len(ordered)) - 1]))


def calibrate(model: GbdtModel, records: Sequence[PromptRecord], p_safe: float = 0.95, source_split: str = "validation") -> SafetyMargin:
    res = positive_residuals(model, records)
    return SafetyMargin(compute_delta(res, p_safe), p_safe, len(res), source_split)


def effective_length(predicted: int, delta: int, l_max: int) -> int:
    if predicted < 1 or delta < 0 or l_max < 1:
        raise ValueError("need predicted >= 1, delta >= 0, l_max >= 1")
    return min(predicted + delta, l_max)


def exceedance_rate(residuals: Sequence[int], delta: int) -> float:
    """Fraction of under-predictions still not covered after adding ``delta``."""
    if not residuals:
        return 0.0
    return sum(1 for r in residuals if r > delta) / len(residuals)


def save_margin(margin: SafetyMargin, path) -> None:
    Path(path).write_text(json.dumps(margin.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_margin(path) -> SafetyMargin:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
        if d.get("format", MARGIN_FORMAT) != MARGIN_FORMAT:
            raise ValueError("wrong format tag")
        return SafetyMargin(int(d["delta"]), float(d["p_safe"]), int(d["residual_count"]), d.get("source_split", "validation"))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ValueError(f"{path}: bad margin file ({exc})") from None


def margin_path_for(model_path) -> Path:
    p = Path(model_path)
    return p.with_name(p.stem + ".margin.json")
