"""Prompt featurization for the response-length regressor.

Text-only vectors hold hashed unigram/bigram counts followed by the prompt's
character and token counts. The engineered variant appends keyword flags,
punctuation counts and character-level Shannon entropy.
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

from dllm_budget.dataset import tokens

TEXT_ONLY = "text-only"
ENGINEERED = "engineered"
VARIANTS = (TEXT_ONLY, ENGINEERED)

HASH_ALGORITHM = "blake2b-64-le"

DEFAULT_KEYWORDS = ("summarize", "list", "explain", "write", "poem", "essay", "code", "brief", "detail")
_PUNCT = (("?", "count_question"), ("!", "count_exclaim"), (",", "count_comma"), ("\n", "count_newline"), ("```", "count_code_fence"))


@lru_cache(maxsize=1 << 16)
def stable_hash(s: str) -> int:
    """64-bit hash that is stable across processes and platforms."""
    return int.from_bytes(hashlib.blake2b(s.encode("utf-8"), digest_size=8).digest(), "little")


@dataclass(frozen=True)
class FeatureConfig:
    hash_buckets: int = 4096
    keywords: tuple[str, ...] = DEFAULT_KEYWORDS

    def __post_init__(self):
        b = self.hash_buckets
        if b < 1 or b & (b - 1):
            raise ValueError(f"hash_buckets must be a power of two, got {b}")
        object.__setattr__(self, "keywords", tuple(self.keywords))

    def to_dict(self) -> dict:
        return {"hash_buckets": self.hash_buckets, "keywords": list(self.keywords), "hash": HASH_ALGORITHM}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        if d.get("hash", HASH_ALGORITHM) != HASH_ALGORITHM:
            raise ValueError(f"unsupported hash algorithm {d['hash']!r}")
        return cls(hash_buckets=int(d["hash_buckets"]), keywords=tuple(d["keywords"]))


def dense_feature_names(variant: str, config: FeatureConfig) -> list[str]:
    names = ["char_count", "token_count"]
    if variant == ENGINEERED:
        names += [f"kw_{k}" for k in config.keywords]
        names += [name for _, name in _PUNCT]
        names.append("char_entropy")
    elif variant != TEXT_ONLY:
        raise ValueError(f"unknown variant {variant!r}")
    return names


def n_features(variant: str, config: FeatureConfig) -> int:
    return config.hash_buckets + len(dense_feature_names(variant, config))


def feature_names(variant: str, config: FeatureConfig) -> list[str]:
    return [f"hash_{i}" for i in range(config.hash_buckets)] + dense_feature_names(variant, config)


def char_entropy(text: str) -> float:
    """Shannon entropy of the character distribution, in bits."""
    n = len(text)
    if n == 0:
        return 0.0
    h = 0.0
    for c in Counter(text).values():
        p = c / n
        h -= p * math.log2(p)
    return h


def _bucket(key: str, buckets: int) -> int:
    return stable_hash(key) % buckets


def featurize_sparse(prompt_text: str, variant: str, config: FeatureConfig) -> dict[int, float]:
    """Nonzero entries of the feature vector as ``{index: value}``."""
    toks = [t.lower() for t in tokens(prompt_text)]
    B = config.hash_buckets
    counts: Counter = Counter()
    for t in toks:
        counts[_bucket("u:" + t, B)] += 1
    for a, b in zip(toks, toks[1:]):
        counts[_bucket("b:" + a + " " + b, B)] += 1
    out = {i: float(v) for i, v in counts.items()}

    dense = [float(len(prompt_text)), float(len(toks))]
    if variant == ENGINEERED:
        lowered = prompt_text.lower()
        dense += [1.0 if kw in lowered else 0.0 for kw in config.keywords]
        dense += [float(prompt_text.count(p)) for p, _ in _PUNCT]
        dense.append(char_entropy(prompt_text))
    elif variant != TEXT_ONLY:
        raise ValueError(f"unknown variant {variant!r}")
    for j, v in enumerate(dense):
        if v != 0.0:
            out[B + j] = v
    return out


def featurize(prompt_text: str, variant: str, config: FeatureConfig) -> np.ndarray:
    vec = np.zeros(n_features(variant, config))
    for i, v in featurize_sparse(prompt_text, variant, config).items():
        vec[i] = v
    return vec


def featurize_matrix(prompts, variant: str, config: FeatureConfig) -> sparse.csr_matrix:
    rows, cols, vals = [], [], []
    n = 0
    for i, text in enumerate(prompts):
        feats = featurize_sparse(text, variant, config)
        rows.extend([i] * len(feats))
        cols.extend(feats.keys())
        vals.extend(feats.values())
        n = i + 1
    return sparse.csr_matrix(
        (np.array(vals, dtype=float), (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))),
        shape=(n, n_features(variant, config)),
    )
