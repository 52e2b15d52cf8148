import pytest
from hypothesis import given
from hypothesis import strategies as st

from dllm_budget.calibration import (
    SafetyMargin,
    compute_delta,
    effective_length,
    exceedance_rate,
    load_margin,
    margin_path_for,
    quantile_rank,
    residuals_from_pairs,
    save_margin,
)


def test_residuals_keep_only_under_predictions():
    assert residuals_from_pairs([10, 5, 20], [8, 7, 15]) == [2, 5]
    assert residuals_from_pairs([5], [5]) == []


@pytest.mark.parametrize(
    "res,p,delta",
    [([1, 2, 4, 10], 0.95, 10), ([], 0.95, 0), ([3], 0.5, 3), ([5, 1, 3, 2, 4], 0.6, 3), (list(range(1, 101)), 0.95, 95)],
)
def test_delta_examples(res, p, delta):
    assert compute_delta(res, p) == delta


def test_quantile_rank_is_decimal_exact():
    assert quantile_rank(0.95, 100) == 95
    assert quantile_rank(0.99, 100) == 99
    assert quantile_rank(0.95, 1) == 1


@given(st.lists(st.integers(1, 10_000), min_size=1, max_size=400), st.floats(0.01, 1.0))
def test_delta_coverage(res, p):
    d = compute_delta(res, p)
    covered = sum(r <= d for r in res)
    assert covered >= p * len(res) - 1e-9
    assert d in res


@given(st.lists(st.integers(1, 1000), min_size=1, max_size=200), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_delta_monotone_in_p(res, a, b):
    lo, hi = sorted((a, b))
    assert compute_delta(res, lo) <= compute_delta(res, hi)


def test_delta_rejects_bad_p():
    for p in (0.0, 1.5, -0.1):
        with pytest.raises(ValueError):
            compute_delta([1], p)


@pytest.mark.parametrize("pred,delta,lmax,out", [(100, 8, 4096, 108), (4090, 20, 4096, 4096), (1, 0, 4096, 1)])
def test_effective_length(pred, delta, lmax, out):
    assert effective_length(pred, delta, lmax) == out


def test_exceedance_rate():
    assert exceedance_rate([1, 2, 3, 10], 3) == 0.25
    assert exceedance_rate([], 0) == 0.0


def test_margin_file_round_trip(tmp_path):
    m = SafetyMargin(12, 0.95, 40)
    path = margin_path_for(tmp_path / "model.json")
    assert path.name == "model.margin.json"
    save_margin(m, path)
    assert load_margin(path) == m
    path.write_text("{}")
    with pytest.raises(ValueError):
        load_margin(path)
