"""Response-length predictor: boosted trees over prompt features."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from dllm_budget.dataset import PromptRecord, round_half_away
from dllm_budget.features import (
    TEXT_ONLY,
    VARIANTS,
    FeatureConfig,
    featurize_matrix,
    featurize_sparse,
)
from dllm_budget.gbdt import Tree, TrainingError, boost

MODEL_FORMAT = "dllm-budget/gbdt"
MODEL_VERSION = 1


class ModelFileError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 200
    max_depth: int = 6
    learning_rate: float = 0.1
    min_samples_leaf: int = 20
    hash_buckets: int = 4096
    seed: int = 0

    def __post_init__(self):
        for name in ("rounds", "max_depth", "min_samples_leaf", "hash_buckets"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        FeatureConfig(self.hash_buckets)  # power-of-two check

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class GbdtModel:
    variant: str
    feature_config: FeatureConfig
    base_score: float
    learning_rate: float
    trees: list[Tree]
    max_depth: int
    train_rmse: list[float] = field(default_factory=list)
    # split provenance written by the CLI so calibration can rebuild the validation slice
    training: dict = field(default_factory=dict)

    def raw_predict_sparse(self, feats: dict) -> float:
        f = self.base_score
        for t in self.trees:
            f = f + self.learning_rate * t.predict_one(feats)
        return f

    def raw_predict_matrix(self, X) -> np.ndarray:
        F = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            F = F + self.learning_rate * t.predict(X)
        return F

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "variant": self.variant,
            "feature_config": self.feature_config.to_dict(),
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "train_rmse": self.train_rmse,
            "training": self.training,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtModel":
        if d.get("format") != MODEL_FORMAT:
            raise ModelFileError(f"not a model file (format={d.get('format')!r})")
        if d.get("version") != MODEL_VERSION:
            raise ModelFileError(f"unsupported model version {d.get('version')!r}, expected {MODEL_VERSION}")
        if d.get("variant") not in VARIANTS:
            raise ModelFileError(f"unknown variant {d.get('variant')!r}")
        try:
            return cls(
                variant=d["variant"],
                feature_config=FeatureConfig.from_dict(d["feature_config"]),
                base_score=float(d["base_score"]),
                learning_rate=float(d["learning_rate"]),
                trees=[Tree.from_dict(t) for t in d["trees"]],
                max_depth=int(d["max_depth"]),
                train_rmse=[float(v) for v in d.get("train_rmse", [])],
                training=dict(d.get("training", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFileError(f"corrupt model: {exc}") from None


def _clamp_round(raw: float) -> int:
    return max(1, round_half_away(raw))


def train(records: Sequence[PromptRecord], variant: str = TEXT_ONLY, config: TrainConfig = TrainConfig()) -> GbdtModel:
    if not records:
        raise TrainingError("no training records")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    fc = FeatureConfig(config.hash_buckets)
    X = featurize_matrix([r.prompt_text for r in records], variant, fc)
    y = np.array([r.response_length for r in records], dtype=float)
    res = boost(X, y, config.rounds, config.max_depth, config.learning_rate, config.min_samples_leaf)
    return GbdtModel(variant, fc, res.base_score, config.learning_rate, res.trees, config.max_depth, res.train_rmse)


def predict_length(model: GbdtModel, prompt_text: str) -> int:
    """Predicted response length, rounded half away from zero, at least 1."""
    feats = featurize_sparse(prompt_text, model.variant, model.feature_config)
    return _clamp_round(model.raw_predict_sparse(feats))


def predict_lengths(model: GbdtModel, prompts: Sequence[str]) -> list[int]:
    """Batch form of :func:`predict_length`; returns identical values."""
    if not prompts:
        return []
    X = featurize_matrix(prompts, model.variant, model.feature_config)
    return [_clamp_round(v) for v in model.raw_predict_matrix(X).tolist()]


@dataclass(frozen=True)
class RegressionMetrics:
    rmse: float
    mae: float
    pct_within_10: float
    count: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def metrics_from_pairs(truth: Sequence[int], predicted: Sequence[int]) -> RegressionMetrics:
    if len(truth) == 0:
        raise ValueError("no records to evaluate")
    k = np.asarray(truth, dtype=float)
    p = np.asarray(predicted, dtype=float)
    err = p - k
    within = np.abs(err) <= 0.10 * k
    return RegressionMetrics(
        rmse=float(math.sqrt(np.mean(err**2))),
        mae=float(np.mean(np.abs(err))),
        pct_within_10=float(100.0 * within.mean()),
        count=len(k),
    )


def evaluate(model: GbdtModel, records: Sequence[PromptRecord]) -> RegressionMetrics:
    preds = predict_lengths(model, [r.prompt_text for r in records])
    return metrics_from_pairs([r.response_length for r in records], preds)


def save_model(model: GbdtModel, path) -> None:
    text = json.dumps(model.to_dict(), sort_keys=True, separators=(",", ":"))
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_model(path) -> GbdtModel:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: corrupt model file ({exc.msg})") from None
    if not isinstance(d, dict):
        raise ModelFileError(f"{path}: corrupt model file")
    return GbdtModel.from_dict(d)
