import pytest
from hypothesis import given
from hypothesis import strategies as st

from dllm_budget.cost_model import LLADA_8B, ModelConfig, total_inference_flop
from dllm_budget.dataset import PromptRecord, default_tokenize
from dllm_budget.strategies import (
    AttemptTrace,
    MaxLength,
    MeanDoubling,
    Oracle,
    PredictThenDiffuse,
    SimContext,
    StaticDoubling,
    StrategyError,
    read_traces_jsonl,
    sample_cost,
    simulate_sample,
    write_traces_jsonl,
)

CFG = ModelConfig(2, 8, 16, 4, 4096)


def rec(k, text="p", rid="r"):
    return PromptRecord(rid, text, k)


def ptd(pred, delta):
    return PredictThenDiffuse(delta=delta), SimContext(predictions={"r": pred})


def test_static_doubling_one_retry():
    t = simulate_sample(StaticDoubling(), rec(300), CFG)
    assert t.attempted_lengths == (200, 400)
    assert t.fallback_count == 1 and not t.truncated
    assert sample_cost(t) == total_inference_flop(CFG, 200) + total_inference_flop(CFG, 400)


def test_static_doubling_caps_at_lmax():
    t = simulate_sample(StaticDoubling(), rec(4000), CFG)
    assert t.attempted_lengths == (200, 400, 800, 1600, 3200, 4096)


def test_ptd_fallback_to_lmax():
    s, ctx = ptd(100, 5)
    t = simulate_sample(s, rec(110), CFG, ctx)
    assert t.attempted_lengths == (105, 4096)
    s, ctx = ptd(100, 10)
    assert simulate_sample(s, rec(110), CFG, ctx).attempted_lengths == (110,)


def test_max_truncates():
    t = simulate_sample(MaxLength(), rec(5000), CFG)
    assert t.attempted_lengths == (4096,) and t.truncated


def test_doubling_truncates_past_lmax():
    t = simulate_sample(MeanDoubling(mean=1000), rec(9000), CFG)
    assert t.attempted_lengths == (1000, 2000, 4000, 4096) and t.truncated


def test_mean_uses_rounded_train_mean():
    t = simulate_sample(MeanDoubling(), rec(10), CFG, SimContext(train_mean=96.5))
    assert t.attempted_lengths == (97,)


def test_oracle_single_attempt():
    assert simulate_sample(Oracle(), rec(321), CFG).attempted_lengths == (321,)


def test_missing_context_errors():
    with pytest.raises(StrategyError):
        simulate_sample(MeanDoubling(), rec(10), CFG)
    with pytest.raises(StrategyError):
        simulate_sample(PredictThenDiffuse(), rec(10), CFG, SimContext(predictions={"r": 5}))
    with pytest.raises(StrategyError):
        simulate_sample(PredictThenDiffuse(delta=0), rec(10), CFG)
    with pytest.raises(StrategyError):
        StaticDoubling(initial=0)


def test_include_prompt_adds_prompt_tokens():
    r = rec(50, text="one two three")
    t = simulate_sample(Oracle(), r, CFG, SimContext(include_prompt=True))
    assert t.attempt_flops == (total_inference_flop(CFG, 50 + default_tokenize(r.prompt_text)),)


ALL = [MaxLength(), StaticDoubling(), StaticDoubling(initial=7), MeanDoubling(mean=96), MeanDoubling(mean=1)]


@given(st.integers(1, 4096), st.integers(1, 4096), st.integers(0, 500))
def test_oracle_dominates(k, pred, delta):
    r = rec(k)
    best = sample_cost(simulate_sample(Oracle(), r, LLADA_8B))
    for s in ALL:
        assert sample_cost(simulate_sample(s, r, LLADA_8B)) >= best
    s, ctx = ptd(pred, delta)
    assert sample_cost(simulate_sample(s, r, LLADA_8B, ctx)) >= best


@given(st.integers(1, 20000), st.integers(1, 300))
def test_doubling_terminates(k, start):
    t = simulate_sample(MeanDoubling(mean=start), rec(k), CFG)
    L = t.attempted_lengths
    assert all(b == min(2 * a, 4096) for a, b in zip(L, L[1:]))
    assert t.truncated == (k > 4096)
    assert t.final_length >= min(k, 4096)
    assert t.n_attempts <= 2 + (4096 // start).bit_length()


def test_trace_jsonl_round_trip(tmp_path):
    traces = [simulate_sample(StaticDoubling(), rec(k, rid=str(k)), CFG) for k in (1, 300, 9999)]
    path = tmp_path / "t.jsonl"
    write_traces_jsonl(traces, path)
    assert read_traces_jsonl(path) == traces
    assert isinstance(traces[0], AttemptTrace)
