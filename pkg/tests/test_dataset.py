import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from dllm_budget.dataset import (
    DatasetError,
    MixtureComponent,
    MixtureSpec,
    bimodal_preset,
    compute_stats,
    default_tokenize,
    gen_synthetic,
    load_jsonl,
    partition,
    skewed_preset,
    split_train_test,
    write_jsonl,
)
from oracles import brute_stats


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.mark.parametrize("text,n", [("", 0), ("Hello, world!", 4), ("a  b", 2), ("a b c", 3), ("x...y", 3), ("émigré café", 2)])
def test_default_tokenize(text, n):
    assert default_tokenize(text) == n


def test_load_jsonl_passthrough_and_tokenize(tmp_path):
    path = write_lines(tmp_path / "d.jsonl", ['{"prompt":"hi","response_length":7}', '{"prompt":"p","response":"a b c"}'])
    recs = load_jsonl(path)
    assert [r.response_length for r in recs] == [7, 3]
    assert [r.id for r in recs] == ["1", "2"]


def test_load_jsonl_missing_response(tmp_path):
    path = write_lines(tmp_path / "d.jsonl", ['{"prompt":"p"}'])
    with pytest.raises(DatasetError, match="record 1: no response or response_length"):
        load_jsonl(path)


def test_load_jsonl_malformed_names_line(tmp_path):
    path = write_lines(tmp_path / "d.jsonl", ['{"prompt":"p","response_length":2}', "{oops"])
    with pytest.raises(DatasetError, match="line 2"):
        load_jsonl(path)


def test_load_jsonl_precomputed_requires_length(tmp_path):
    path = write_lines(tmp_path / "d.jsonl", ['{"prompt":"p","response":"x y"}'])
    with pytest.raises(DatasetError, match="precomputed"):
        load_jsonl(path, tokenizer="precomputed")


def test_load_is_idempotent_and_round_trips(tmp_path):
    recs = gen_synthetic(skewed_preset(50, seed=4))
    path = tmp_path / "s.jsonl"
    write_jsonl(recs, path)
    assert load_jsonl(path) == load_jsonl(path) == recs
    assert json.loads(path.read_text().splitlines()[0])["component"] == "chat"


def test_split_sizes_and_determinism():
    recs = list(range(10))
    train, test = split_train_test(recs, 0.8, seed=1)
    assert (len(train), len(test)) == (8, 2)
    assert sorted(train + test) == recs
    assert split_train_test(recs, 0.8, 1) == (train, test)


def test_split_seed_changes_partition():
    recs = list(range(100))
    assert split_train_test(recs, 0.8, 1)[0] != split_train_test(recs, 0.8, 2)[0]


def test_split_errors():
    with pytest.raises(DatasetError):
        split_train_test([1], 0.8, 0)
    with pytest.raises(DatasetError):
        split_train_test([1, 2], 1.0, 0)


def test_partition_is_disjoint():
    recs = list(range(1000))
    p = partition(recs, seed=0)
    assert (len(p.fit), len(p.val), len(p.test)) == (720, 80, 200)
    assert sorted(p.fit + p.val + p.test) == recs


def test_stats_examples():
    s = compute_stats([2, 2, 2, 2])
    assert (s.mean, s.std, s.excess_kurtosis) == (2.0, 0.0, None)
    s = compute_stats([1, 2, 3, 4, 5])
    assert s.mean == 3 and s.median == 3
    assert s.std == pytest.approx(1.5811388, abs=1e-6)
    s = compute_stats([1, 1, 1, 1, 100])
    assert s.excess_kurtosis == pytest.approx(sps.kurtosis([1, 1, 1, 1, 100], fisher=True, bias=True), rel=1e-12)
    assert compute_stats([4, 1, 3, 2]).median == 2


def test_stats_needs_two():
    with pytest.raises(DatasetError):
        compute_stats([5])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 5000), min_size=2, max_size=300))
def test_stats_match_brute_force(xs):
    s = compute_stats(xs)
    mean, std, median, kurt = brute_stats(xs)
    assert s.mean == pytest.approx(mean, rel=1e-9)
    assert s.std == pytest.approx(std, rel=1e-9, abs=1e-12)
    assert s.median == median
    if kurt is None:
        assert s.excess_kurtosis is None
    else:
        assert s.excess_kurtosis == pytest.approx(kurt, rel=1e-9, abs=1e-9)
    assert s.min <= s.median <= s.max


def test_constant_mixture():
    recs = gen_synthetic(MixtureSpec((MixtureComponent(1.0, 50, 0, "constant"),), seed=0, size=200))
    assert {r.response_length for r in recs} == {50}


def test_bimodal_proportions():
    recs = gen_synthetic(bimodal_preset(size=10000, seed=0))
    frac_short = sum(r.component == "short" for r in recs) / len(recs)
    assert abs(frac_short - 0.6) <= 0.02


def test_skewed_preset_hits_targets():
    s = compute_stats(gen_synthetic(skewed_preset(size=10000, seed=0)))
    assert abs(s.mean - 96) <= 9.6
    assert abs(s.std - 120) <= 18
    assert s.excess_kurtosis > 10  # heavy tail


def test_generation_is_reproducible():
    spec = bimodal_preset(size=300, seed=9)
    assert gen_synthetic(spec) == gen_synthetic(spec)
    assert gen_synthetic(spec) != gen_synthetic(bimodal_preset(size=300, seed=10))


def test_all_lengths_positive():
    spec = MixtureSpec((MixtureComponent(0.5, 2, 40, "normal"), MixtureComponent(0.5, 5, 50, "lognormal")), seed=1, size=2000)
    assert min(r.response_length for r in gen_synthetic(spec)) >= 1


@pytest.mark.parametrize(
    "components",
    [
        (MixtureComponent(0.5, 10), MixtureComponent(0.4, 10)),
        (MixtureComponent(1.0, 10, family="uniform"),),
        (MixtureComponent(-0.5, 10), MixtureComponent(1.5, 10)),
        (),
    ],
)
def test_invalid_mixtures(components):
    with pytest.raises(DatasetError):
        MixtureSpec(components)


def test_prompt_cue_tracks_length():
    recs = gen_synthetic(MixtureSpec((MixtureComponent(1.0, 80, 40, "normal"),), seed=2, size=500, cue_noise_rate=0.0))
    for r in recs:
        # template "Briefly write about N items:" contributes 6 tokens
        assert default_tokenize(r.prompt_text) == r.response_length + 6
