"""Analytical FLOP accounting for one diffusion-LLM inference.

Per block and per denoising step, a forward pass over ``L`` canvas positions
costs::

    mlp  = 6 * L * D * F
    proj = 8 * L * D**2          (Q, K, V, O projections)
    attn = 4 * D * L**2          (dot-product attention)

which sums to ``D * (alpha * L + beta * L**2)`` with ``alpha = 6F + 8D`` and
``beta = 4``. A full inference repeats this for ``N`` blocks and ``T`` steps.

All counts are Python integers, so they never wrap. Inputs are coerced through
``operator.index`` so that fixed-width integers (numpy scalars) cannot leak
into the arithmetic and overflow silently.
"""

from __future__ import annotations

import csv
import operator
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

BETA = 4


class CostModelError(ValueError):
    pass


class DegenerateFitError(CostModelError):
    pass


def _as_int(value, name: str) -> int:
    if isinstance(value, bool):
        raise CostModelError(f"{name} must be an integer, got bool")
    try:
        return operator.index(value)
    except TypeError:
        raise CostModelError(f"{name} must be an integer, got {value!r}") from None


@dataclass(frozen=True)
class ModelConfig:
    """Shape of a diffusion LLM as seen by the cost model."""

    num_blocks: int
    hidden_dim: int
    mlp_width: int
    diffusion_steps: int
    max_response_len: int

    def __post_init__(self):
        for name in ("num_blocks", "hidden_dim", "mlp_width", "diffusion_steps", "max_response_len"):
            value = _as_int(getattr(self, name), name)
            if value < 1:
                raise CostModelError(f"{name} must be >= 1, got {value}")
            object.__setattr__(self, name, value)

    @property
    def alpha(self) -> int:
        return 6 * self.mlp_width + 8 * self.hidden_dim

    @property
    def beta(self) -> int:
        return BETA

    def to_dict(self) -> dict:
        return {
            "num_blocks": self.num_blocks,
            "hidden_dim": self.hidden_dim,
            "mlp_width": self.mlp_width,
            "diffusion_steps": self.diffusion_steps,
            "max_response_len": self.max_response_len,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__})


# LLaDA-8B-like shape: D=4096, F=3D, T=128 steps, trained canvas of 4096.
LLADA_8B = ModelConfig(num_blocks=32, hidden_dim=4096, mlp_width=12288, diffusion_steps=128, max_response_len=4096)


@dataclass(frozen=True)
class CostBreakdown:
    mlp_flop: int
    proj_flop: int
    attn_flop: int

    @property
    def total_flop(self) -> int:
        return self.mlp_flop + self.proj_flop + self.attn_flop


def _seq_len(seq_len) -> int:
    L = _as_int(seq_len, "seq_len")
    if L < 0:
        raise CostModelError(f"seq_len must be >= 0, got {L}")
    return L


def per_block_flop(config: ModelConfig, seq_len: int) -> CostBreakdown:
    L = _seq_len(seq_len)
    D, F = config.hidden_dim, config.mlp_width
    return CostBreakdown(
        mlp_flop=6 * L * D * F,
        proj_flop=8 * L * D * D,
        attn_flop=4 * D * L * L,
    )


def total_inference_flop(config: ModelConfig, seq_len: int) -> int:
    """FLOP for a full inference: T steps x N blocks over a canvas of ``seq_len``."""
    L = _seq_len(seq_len)
    return config.diffusion_steps * config.num_blocks * config.hidden_dim * (config.alpha * L + config.beta * L * L)


class Crossover(NamedTuple):
    length: int
    remainder: int


def crossover_length(config: ModelConfig) -> Crossover:
    """Floor of alpha/beta, the canvas length past which attention dominates."""
    q, r = divmod(config.alpha, config.beta)
    return Crossover(q, r)


@dataclass(frozen=True)
class QuadraticFit:
    linear_coeff: float
    quadratic_coeff: float
    intercept: float
    r_squared: float

    def predict(self, seq_len):
        L = np.asarray(seq_len, dtype=float)
        return self.intercept + self.linear_coeff * L + self.quadratic_coeff * L * L


def fit_quadratic(points: Iterable[tuple[float, float]]) -> QuadraticFit:
    """Least-squares fit of ``flop = a*L + b*L**2 + c``.

    L is centred and scaled before building the normal equations; the fitted
    coefficients are mapped back to the raw basis afterwards.
    """
    pts = [(float(L), float(y)) for L, y in points]
    if len(pts) < 3 or len({L for L, _ in pts}) < 3:
        raise DegenerateFitError("quadratic fit needs at least 3 distinct seq_len values")
    L = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])

    mu = L.mean()
    scale = np.abs(L - mu).max()
    u = (L - mu) / scale
    y_scale = np.abs(y).max() or 1.0
    yn = y / y_scale
    A = np.column_stack([np.ones_like(u), u, u * u])
    # np.linalg.solve is LU with partial pivoting
    c0, c1, c2 = np.linalg.solve(A.T @ A, A.T @ yn) * y_scale

    # y = c0 + c1*(L-mu)/s + c2*(L-mu)^2/s^2, expanded in powers of L
    quad = c2 / scale**2
    lin = c1 / scale - 2.0 * c2 * mu / scale**2
    icpt = c0 - c1 * mu / scale + c2 * mu * mu / scale**2

    fitted = c0 + c1 * u + c2 * u * u
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return QuadraticFit(float(lin), float(quad), float(icpt), r2)


def cost_curve(config: ModelConfig, lengths: Sequence[int]) -> list[tuple[int, int]]:
    return [(int(L), total_inference_flop(config, L)) for L in lengths]


def write_cost_curve_csv(points: Iterable[tuple[int, int]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seq_len", "flop"])
        for L, flop in points:
            w.writerow([L, flop])


def read_cost_curve_csv(path) -> list[tuple[float, float]]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"seq_len", "flop"} <= set(reader.fieldnames):
            raise CostModelError(f"{path}: expected header 'seq_len,flop'")
        points = []
        for lineno, row in enumerate(reader, start=2):
            try:
                points.append((float(row["seq_len"]), float(row["flop"])))
            except (TypeError, ValueError):
                raise CostModelError(f"{path}:{lineno}: bad row {row!r}") from None
    return points
