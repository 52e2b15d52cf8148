import numpy as np
import pytest
from scipy import sparse

from dllm_budget.gbdt import BinnedMatrix, Tree, TrainingError, boost, best_splits, grow_tree
from oracles import brute_best_stump


def stump(X, r, msl=1):
    bm = BinnedMatrix(X)
    sp = best_splits(bm, np.zeros(bm.n_rows, dtype=np.int64), 1, np.asarray(r, float), msl)[0]
    return None if sp is None else (sp.feature, sp.threshold)


def test_three_point_example():
    X = np.array([[1.0], [2.0], [3.0]])
    y = np.array([0.0, 0.0, 10.0])
    res = boost(X, y, rounds=1, max_depth=1, learning_rate=1.0, min_samples_leaf=1)
    assert res.base_score == pytest.approx(10 / 3)
    t = res.trees[0]
    assert t.threshold[0] == 2.5
    assert sorted(t.value[1:]) == pytest.approx([-10 / 3, 20 / 3])
    pred = res.base_score + t.predict(X)
    np.testing.assert_allclose(pred, y, atol=1e-12)


def test_constant_target():
    X = np.arange(40, dtype=float).reshape(-1, 1)
    res = boost(X, np.full(40, 50.0), rounds=10, max_depth=3, learning_rate=0.1, min_samples_leaf=1)
    assert res.base_score == 50.0 and res.trees == []


def test_depth_respects_limit():
    rng = np.random.default_rng(0)
    X = rng.integers(0, 20, size=(300, 4)).astype(float)
    y = rng.normal(size=300) + X[:, 0] * X[:, 1]
    res = boost(X, y, rounds=20, max_depth=3, learning_rate=0.3, min_samples_leaf=2)
    assert res.trees and all(t.depth() <= 3 for t in res.trees)


def test_min_samples_leaf():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 3))
    y = rng.normal(size=200)
    tree, leaf = grow_tree(BinnedMatrix(X), y - y.mean(), 4, 15)
    sizes = np.bincount(leaf)
    assert sizes[sizes > 0].min() >= 15


@pytest.mark.parametrize("seed", range(40))
def test_stump_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(2, 120)), int(rng.integers(1, 5))
    X = rng.integers(-3, 4, size=(n, d)).astype(float)
    if seed % 3 == 0:
        X[:, 0] = rng.normal(size=n)
    if d > 1 and seed % 4 == 0:
        X[:, -1] = X[:, 0]  # duplicated column: tie must go to the lower index
    r = rng.normal(size=n) * 10 + (seed % 5)
    msl = int(rng.choice([1, 2, 5]))
    assert stump(X, r, msl) == brute_best_stump(X, r, msl)
    assert stump(sparse.csr_matrix(X), r, msl) == brute_best_stump(X, r, msl)


def test_exact_tie_prefers_lowest_threshold():
    # symmetric data: cutting at 1.5 or at 2.5 reduces SSE equally
    X = np.array([[0.0], [1.0], [2.0], [3.0], [4.0]])
    r = np.array([1.0, 1.0, 0.0, 1.0, 1.0])
    assert stump(X, r) == brute_best_stump(X, r, 1) == (0, 1.5)


def test_monotone_and_deterministic():
    rng = np.random.default_rng(2)
    X = sparse.random(500, 50, density=0.1, random_state=3, format="csr")
    y = rng.exponential(100, size=500)
    a = boost(X, y, rounds=30, max_depth=4, learning_rate=0.3, min_samples_leaf=3)
    b = boost(X, y, rounds=30, max_depth=4, learning_rate=0.3, min_samples_leaf=3)
    assert all(x >= z for x, z in zip(a.train_rmse, a.train_rmse[1:]))
    assert [t.to_dict() for t in a.trees] == [t.to_dict() for t in b.trees]
    F = np.full(500, a.base_score)
    for t, rm in zip(a.trees, a.train_rmse[1:]):
        F = F + 0.3 * t.predict(X)
        assert np.sqrt(np.mean((y - F) ** 2)) == pytest.approx(rm, rel=1e-9)


def test_tree_round_trip_and_validation():
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    res = boost(X, [1.0, 2.0, 3.0, 4.0], rounds=2, max_depth=2, learning_rate=1.0, min_samples_leaf=1)
    t = res.trees[0]
    t2 = Tree.from_dict(t.to_dict())
    np.testing.assert_array_equal(t.predict(X), t2.predict(X))
    assert t.predict_one({0: 1.0}) == t.predict(X)[0]
    bad = t.to_dict()
    bad["left"][0] = 99
    with pytest.raises(ValueError):
        Tree.from_dict(bad)


@pytest.mark.parametrize(
    "X,y,msl",
    [
        (np.zeros((0, 1)), [], 1),
        (np.zeros((3, 1)), [1.0, np.nan, 2.0], 1),
        (np.zeros((3, 1)), [1.0, 2.0, 3.0], 2),
    ],
)
def test_training_errors(X, y, msl):
    with pytest.raises(TrainingError):
        boost(X, y, rounds=1, max_depth=1, learning_rate=0.1, min_samples_leaf=msl)
