"""Forward-chaining validation splits and seeded random hyperparameter search."""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from ..errors import DataError
from ..metrics import mape
from .gbt import GbtConfig, fit_gbt

SEASONAL_STEP = 7

# 3 * 3 * 3 * 2 * 2 = 108 grid points; the remaining knobs stay fixed.
GBT_SPACE: dict[str, Sequence[Any]] = {
    "rounds": (50, 100, 200),
    "learning_rate": (0.05, 0.1, 0.3),
    "max_depth": (2, 3, 5),
    "lambda_l2": (1.0, 5.0),
    "subsample": (0.8, 1.0),
    "min_child_weight": (1.0,),
    "gamma_split": (0.0,),
    "colsample": (1.0,),
}


def time_slice_splits(n: int, val_len: int = SEASONAL_STEP, initial: int | None = None,
                      step: int = SEASONAL_STEP, max_splits: int | None = None):
    """Growing-window (train, validation) index ranges.

    The first split trains on ``range(initial)`` and validates on the next
    ``val_len`` points; each later split extends training by ``step``. With
    ``max_splits`` only the most recent splits are kept.
    """
    if initial is None:
        initial = max(step, n // 2)
    if val_len < 1 or initial < 1 or step < 1:
        raise DataError("initial, val_len and step must be positive")
    if n < initial + val_len:
        raise DataError(f"series of length {n} too short for initial={initial}, val_len={val_len}")
    splits = []
    end = initial
    while end + val_len <= n:
        splits.append((range(0, end), range(end, end + val_len)))
        end += step
    if max_splits is not None:
        splits = splits[-max_splits:]
    return splits


def grid_points(space: Mapping[str, Sequence[Any]]) -> list[dict]:
    keys = sorted(space)
    return [dict(zip(keys, values)) for values in itertools.product(*(space[k] for k in keys))]


def sample_configs(space: Mapping[str, Sequence[Any]], budget: int, seed: int) -> list[dict]:
    """Draw ``budget`` points from the grid, without replacement while possible."""
    if budget < 1:
        raise DataError("budget must be >= 1")
    grid = grid_points(space)
    rng = np.random.default_rng(seed)
    if budget <= len(grid):
        idx = rng.permutation(len(grid))[:budget]
    else:
        idx = np.concatenate([rng.permutation(len(grid)), rng.integers(len(grid), size=budget - len(grid))])
    return [grid[i] for i in idx]


@dataclass
class TuningResult:
    best: Any
    best_score: float
    trace: list[tuple[int, dict, float]] = field(default_factory=list)

    def trace_csv(self) -> str:
        if not self.trace:
            return "trial,score\n"
        keys = sorted(self.trace[0][1])
        lines = [",".join(["trial", *keys, "score"])]
        for i, params, score in self.trace:
            lines.append(",".join([str(i), *(repr(params[k]) for k in keys), repr(score)]))
        return "\n".join(lines) + "\n"


def random_search(candidates: list[dict], score: Callable[[dict], float], threads: int = 1,
                  ) -> tuple[int, list[float]]:
    """Score candidates (memoised on identical params); argmin with earliest-index ties."""
    unique: dict[tuple, int] = {}
    for params in candidates:
        unique.setdefault(tuple(sorted(params.items())), len(unique))
    keys = list(unique)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            values = list(pool.map(lambda k: score(dict(k)), keys))
    else:
        values = [score(dict(k)) for k in keys]
    scores = [values[unique[tuple(sorted(p.items()))]] for p in candidates]
    best = min(range(len(scores)), key=lambda i: (not np.isfinite(scores[i]), scores[i], i))
    return best, scores


def cv_score(fit_predict: Callable, X: np.ndarray, y: np.ndarray, splits) -> float:
    errors = []
    for tr, va in splits:
        tr, va = np.asarray(tr), np.asarray(va)
        pred = fit_predict(X[tr], y[tr], X[va])
        errors.append(mape(y[va], pred))
    return float(np.mean(errors))


def tune_gbt(X, y, space: Mapping[str, Sequence[Any]] | None = None, budget: int = 108, seed: int = 0,
             val_len: int = SEASONAL_STEP, initial: int | None = None, max_splits: int | None = None,
             threads: int = 1) -> TuningResult:
    """Random search over ``space`` scored by mean time-slice validation MAPE."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    space = GBT_SPACE if space is None else space
    candidates = sample_configs(space, budget, seed)
    splits = time_slice_splits(len(y), val_len, initial, max_splits=max_splits)

    def score(params):
        cfg = GbtConfig(**{**params, "seed": seed})
        return cv_score(lambda a, b, c: fit_gbt(a, b, cfg).predict(c), X, y, splits)

    best, scores = random_search(candidates, score, threads)
    trace = [(i, p, s) for i, (p, s) in enumerate(zip(candidates, scores))]
    return TuningResult(GbtConfig(**{**candidates[best], "seed": seed}), scores[best], trace)
