"""Prompt/response corpora: JSONL ingestion, splits, stats and synthetic mixtures."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DatasetError(ValueError):
    pass


_TOKEN_RE = re.compile(r"[^\W_]+|(?:[^\w\s]|_)+")


def default_tokenize(text: str) -> int:
    """Whitespace split, then letter/digit runs separated from punctuation runs."""
    return len(_TOKEN_RE.findall(text))


def tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


@dataclass(frozen=True)
class PromptRecord:
    id: str
    prompt_text: str
    response_length: int
    response_text: str | None = None
    component: str | None = None

    def to_json(self) -> dict:
        out = {"id": self.id, "prompt": self.prompt_text}
        if self.response_text is not None:
            out["response"] = self.response_text
        out["response_length"] = self.response_length
        if self.component is not None:
            out["component"] = self.component
        return out


def parse_record(obj, index: int, tokenizer: str = "default") -> PromptRecord:
    """Build a record from one decoded JSONL object (``index`` is 1-based)."""
    if not isinstance(obj, dict):
        raise DatasetError(f"record {index}: expected a JSON object")
    prompt = obj.get("prompt")
    if not isinstance(prompt, str):
        raise DatasetError(f"record {index}: missing or non-string 'prompt'")
    response = obj.get("response")
    if response is not None and not isinstance(response, str):
        raise DatasetError(f"record {index}: 'response' must be a string")
    k = obj.get("response_length")
    if k is None:
        if tokenizer == "precomputed":
            raise DatasetError(f"record {index}: no response_length (tokenizer=precomputed)")
        if response is None:
            raise DatasetError(f"record {index}: no response or response_length")
        k = default_tokenize(response)
    elif isinstance(k, bool) or not isinstance(k, int):
        raise DatasetError(f"record {index}: response_length must be an integer")
    if k < 1:
        raise DatasetError(f"record {index}: response_length must be >= 1, got {k}")
    rid = obj.get("id", str(index))
    component = obj.get("component")
    return PromptRecord(
        id=str(rid),
        prompt_text=prompt,
        response_length=k,
        response_text=response,
        component=None if component is None else str(component),
    )


def load_jsonl(path, tokenizer: str = "default") -> list[PromptRecord]:
    if tokenizer not in ("default", "precomputed"):
        raise DatasetError(f"unknown tokenizer {tokenizer!r}")
    records = []
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}: line {lineno}: malformed JSON ({exc.msg})") from None
            records.append(parse_record(obj, lineno, tokenizer))
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise DatasetError(f"{path}: duplicate record ids")
    return records


def write_jsonl(records: Iterable[PromptRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def split_train_test(records: Sequence, ratio: float, seed: int) -> tuple[list, list]:
    """Seeded shuffle split; the first ``round(ratio * n)`` go to train."""
    n = len(records)
    if n < 2:
        raise DatasetError("need at least 2 records to split")
    if not 0.0 < ratio < 1.0:
        raise DatasetError(f"ratio must be in (0, 1), got {ratio}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = round_half_away(ratio * n)
    train = [records[i] for i in perm[:n_train]]
    test = [records[i] for i in perm[n_train:]]
    return train, test


@dataclass(frozen=True)
class Partition:
    fit: list
    val: list
    test: list

    @property
    def train(self) -> list:
        return self.fit + self.val


def partition(records: Sequence, seed: int, train_ratio: float = 0.8, val_fraction: float = 0.1) -> Partition:
    """80/20 train/test, then a validation slice carved off the train side.

    The validation slice feeds safety-margin calibration so test data is never
    seen before the benchmark.
    """
    train, test = split_train_test(records, train_ratio, seed)
    fit, val = split_train_test(train, 1.0 - val_fraction, seed + 1)
    return Partition(fit, val, test)


@dataclass(frozen=True)
class DatasetStats:
    count: int
    mean: float
    std: float
    median: int | float
    excess_kurtosis: float | None
    min: int | float
    max: int | float

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def __str__(self):
        kurt = "undefined" if self.excess_kurtosis is None else f"{self.excess_kurtosis:.2f}"
        return (
            f"n={self.count} mean={self.mean:.2f} std={self.std:.2f} median={self.median} "
            f"excess_kurtosis={kurt} min={self.min} max={self.max}"
        )


def _lengths(items) -> np.ndarray:
    return np.array([r.response_length if isinstance(r, PromptRecord) else r for r in items])


def compute_stats(records) -> DatasetStats:
    """Sample std (n-1), lower median, Fisher excess kurtosis (None at zero variance)."""
    x = _lengths(records)
    n = len(x)
    if n < 2:
        raise DatasetError("need at least 2 records for statistics")
    xf = x.astype(float)
    mean = float(xf.mean())
    dev = xf - mean
    m2 = float(np.mean(dev**2))
    m4 = float(np.mean(dev**4))
    std = math.sqrt(m2 * n / (n - 1))
    kurt = m4 / (m2 * m2) - 3.0 if m2 > 0 else None
    srt = np.sort(x)
    median = srt[(n - 1) // 2].item()
    return DatasetStats(n, mean, std, median, kurt, srt[0].item(), srt[-1].item())


# --- synthetic mixtures ---------------------------------------------------

FAMILIES = ("constant", "normal", "lognormal")


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mean: float
    spread: float = 0.0
    family: str = "lognormal"
    name: str | None = None


@dataclass(frozen=True)
class MixtureSpec:
    components: tuple[MixtureComponent, ...]
    seed: int = 0
    size: int = 1000
    # fraction of prompts whose length cue is perturbed, and the relative noise scale
    cue_noise_rate: float = 0.05
    cue_noise_scale: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise DatasetError("mixture needs at least one component")
        weights = [c.weight for c in self.components]
        if any(not w > 0 for w in weights):
            raise DatasetError("mixture weights must be positive")
        if abs(math.fsum(weights) - 1.0) > 1e-9:
            raise DatasetError(f"mixture weights sum to {math.fsum(weights)}, expected 1")
        for c in self.components:
            if c.family not in FAMILIES:
                raise DatasetError(f"unknown family {c.family!r}")
            if c.mean < 1 or c.spread < 0:
                raise DatasetError("component mean must be >= 1 and spread >= 0")
        if self.size < 1:
            raise DatasetError("size must be >= 1")
        if not 0.0 <= self.cue_noise_rate <= 1.0:
            raise DatasetError("cue_noise_rate must be in [0, 1]")

    def component_names(self) -> list[str]:
        return [c.name or f"c{i}" for i, c in enumerate(self.components)]

    def to_dict(self) -> dict:
        return {
            "components": [dict(c.__dict__) for c in self.components],
            "seed": self.seed,
            "size": self.size,
            "cue_noise_rate": self.cue_noise_rate,
            "cue_noise_scale": self.cue_noise_scale,
        }


def skewed_preset(size: int = 10000, seed: int = 0) -> MixtureSpec:
    """Heavy-tailed single mode: mean ~96, std ~120 tokens."""
    return MixtureSpec((MixtureComponent(1.0, 96.0, 120.0, "lognormal", "chat"),), seed=seed, size=size)


def bimodal_preset(size: int = 5000, seed: int = 0) -> MixtureSpec:
    """60% short queries around 50 tokens, 40% long reports around 3000."""
    return MixtureSpec(
        (
            MixtureComponent(0.6, 50.0, 30.0, "lognormal", "short"),
            MixtureComponent(0.4, 3000.0, 500.0, "normal", "long"),
        ),
        seed=seed,
        size=size,
    )


def _sample_lengths(rng: np.random.Generator, comp: MixtureComponent, n: int) -> np.ndarray:
    if comp.family == "constant":
        x = np.full(n, comp.mean)
    elif comp.family == "normal":
        x = rng.normal(comp.mean, comp.spread, n)
    else:
        # moment matching: E[X] = mean, SD[X] = spread
        sigma2 = math.log1p((comp.spread / comp.mean) ** 2)
        mu = math.log(comp.mean) - sigma2 / 2
        x = rng.lognormal(mu, math.sqrt(sigma2), n)
    return np.maximum(1, np.floor(x + 0.5)).astype(np.int64)


_BRIEF_TOPICS = (
    "weather", "recipe", "capital", "definition", "translation", "greeting",
    "date", "synonym", "fact", "unit", "spelling", "color",
)
_DETAIL_TOPICS = (
    "history", "economics", "architecture", "biology", "policy", "strategy",
    "physics", "literature", "software", "climate", "medicine", "finance",
)


def _prompt_for(rng: np.random.Generator, cue: int, detailed: bool) -> str:
    topics = _DETAIL_TOPICS if detailed else _BRIEF_TOPICS
    words = " ".join(topics[i] for i in rng.integers(0, len(topics), cue))
    if detailed:
        return f"Write a report in detail about {cue} items: {words}"
    return f"Briefly write about {cue} items: {words}"


def gen_synthetic(spec: MixtureSpec) -> list[PromptRecord]:
    """Sample a mixture and attach prompts whose wording predicts the length.

    Each prompt lists ``cue`` topic words, where ``cue`` equals the sampled
    length except for a ``cue_noise_rate`` fraction that get multiplicative
    noise. Components with mean above 200 tokens use "in detail" phrasing,
    the rest "briefly".
    """
    rng = np.random.default_rng(spec.seed)
    weights = np.array([c.weight for c in spec.components])
    labels = rng.choice(len(spec.components), size=spec.size, p=weights / weights.sum())
    lengths = np.zeros(spec.size, dtype=np.int64)
    for ci, comp in enumerate(spec.components):
        idx = np.flatnonzero(labels == ci)
        lengths[idx] = _sample_lengths(rng, comp, len(idx))

    noisy = rng.random(spec.size) < spec.cue_noise_rate
    noise = rng.normal(0.0, spec.cue_noise_scale, spec.size)
    names = spec.component_names()
    out = []
    for i in range(spec.size):
        k = int(lengths[i])
        cue = k
        if noisy[i]:
            cue = max(1, round_half_away(k * (1.0 + noise[i])))
        comp = spec.components[labels[i]]
        prompt = _prompt_for(rng, cue, detailed=comp.mean > 200)
        out.append(PromptRecord(id=str(i), prompt_text=prompt, response_length=k, component=names[labels[i]]))
    return out
