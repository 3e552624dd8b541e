import numpy as np
import pytest

from evcast.errors import DataError
from evcast.ml.gbt import GbtConfig
from evcast.ml.tuning import (GBT_SPACE, grid_points, random_search, sample_configs, time_slice_splits,
                              tune_gbt)


def test_split_example():
    splits = time_slice_splits(28, val_len=7, initial=14)
    assert [(list(a), list(b)) for a, b in splits] == [
        (list(range(14)), list(range(14, 21))), (list(range(21)), list(range(21, 28)))]


def test_split_boundary_and_max_splits():
    assert len(time_slice_splits(21, 7, 14)) == 1
    with pytest.raises(DataError):
        time_slice_splits(20, 7, 14)
    splits = time_slice_splits(70, 7, 14, max_splits=2)
    assert [b.start for _, b in splits] == [56, 63]


def test_splits_never_leak():
    for tr, va in time_slice_splits(100):
        assert max(tr) < min(va)
        assert len(va) == 7


def test_grid_size():
    assert len(grid_points(GBT_SPACE)) == 108
    pts = sample_configs(GBT_SPACE, 108, seed=0)
    assert len({tuple(sorted(p.items())) for p in pts}) == 108


def test_random_search_ties_and_memo():
    calls = []

    def score(p):
        calls.append(p)
        return {1: 2.0, 2: 1.0, 3: 1.0}[p["a"]]

    best, scores = random_search([{"a": 1}, {"a": 3}, {"a": 2}, {"a": 3}], score)
    assert best == 1 and scores == [2.0, 1.0, 1.0, 1.0]
    assert len(calls) == 3


def test_non_finite_scores_lose():
    best, _ = random_search([{"a": 0}, {"a": 1}], lambda p: [np.nan, 5.0][p["a"]])
    assert best == 1


def _data(n=60):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(n, 2))
    return X, 50 + 10 * (X[:, 0] > 0) + rng.normal(size=n)


def test_budget_one_returns_that_point():
    X, y = _data()
    res = tune_gbt(X, y, budget=1, seed=4, max_splits=1)
    assert len(res.trace) == 1
    assert res.best == GbtConfig(**{**res.trace[0][1], "seed": 4})


def test_planted_optimum_is_found():
    X, y = _data()
    space = {"rounds": (1, 100), "learning_rate": (0.3,), "max_depth": (2,)}
    res = tune_gbt(X, y, space, budget=2, seed=0, max_splits=2)
    assert res.best.rounds == 100


def test_threads_do_not_change_trace():
    X, y = _data()
    space = {"rounds": (5, 10), "max_depth": (1, 2)}
    a = tune_gbt(X, y, space, budget=4, seed=2, max_splits=2)
    b = tune_gbt(X, y, space, budget=4, seed=2, max_splits=2, threads=2)
    assert a.trace_csv() == b.trace_csv() and a.best == b.best
