"""Encoding of scenario frames into numeric design matrices."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import DataError
from .preprocess import Scaler
from .series import DAYS, SEASONS

BASE_FEATURES = ("owners", "day", "season")
# Monday and Winter are the reference levels and get no indicator column.
DAY_LEVELS = DAYS[1:]
SEASON_LEVELS = SEASONS[1:]


def _fit_scaler(x: np.ndarray) -> Scaler:
    lo, hi = float(np.min(x)), float(np.max(x))
    # constant training columns keep their offset but are not stretched
    return Scaler(lo, hi - lo if hi > lo else 1.0)


@dataclass
class FeatureEncoder:
    """Min-max scales numeric columns and one-hot encodes day and season.

    ``numeric`` lists the numeric input columns in order (``owners`` first,
    then any o-features); scalers are fitted on the training frame only.
    """

    numeric: tuple[str, ...] = ("owners",)
    scalers: dict[str, Scaler] = field(default_factory=dict)

    @property
    def columns(self) -> list[str]:
        return (list(self.numeric) + [f"day_{d}" for d in DAY_LEVELS]
                + [f"season_{s}" for s in SEASON_LEVELS])

    @property
    def width(self) -> int:
        return len(self.columns)

    def fit(self, frame: pd.DataFrame) -> "FeatureEncoder":
        self._check(frame)
        self.scalers = {c: _fit_scaler(frame[c].to_numpy(dtype=float)) for c in self.numeric}
        return self

    def _check(self, frame: pd.DataFrame) -> None:
        missing = [c for c in (*self.numeric, "day", "season") if c not in frame.columns]
        if missing:
            raise DataError(f"frame lacks feature columns {missing}")

    def transform(self, frame: pd.DataFrame) -> np.ndarray:
        self._check(frame)
        if not self.scalers:
            raise DataError("encoder used before fit")
        n = len(frame)
        out = np.zeros((n, self.width))
        for j, c in enumerate(self.numeric):
            out[:, j] = self.scalers[c].apply(frame[c].to_numpy(dtype=float))
        base = len(self.numeric)
        days = frame["day"].to_numpy()
        seasons = frame["season"].to_numpy()
        for j, d in enumerate(DAY_LEVELS):
            out[:, base + j] = days == d
        base += len(DAY_LEVELS)
        for j, s in enumerate(SEASON_LEVELS):
            out[:, base + j] = seasons == s
        bad = set(days) - set(DAYS) | set(seasons) - set(SEASONS)
        if bad:
            raise DataError(f"unknown calendar levels {sorted(bad)}")
        return out

    def fit_transform(self, frame: pd.DataFrame) -> np.ndarray:
        return self.fit(frame).transform(frame)

    def to_dict(self) -> dict:
        return {"numeric": list(self.numeric), "columns": self.columns,
                "scalers": {c: s.to_dict() for c, s in self.scalers.items()}}


def scenario_frame(dates: Sequence, owners: Sequence[float]) -> pd.DataFrame:
    """Build a base scenario frame; day and season are derived from the date."""
    from .series import day_of, season_of

    dates = [pd.Timestamp(d).date() for d in dates]
    return pd.DataFrame({
        "date": dates,
        "owners": np.asarray(owners, dtype=float),
        "day": [day_of(d) for d in dates],
        "season": [season_of(d) for d in dates],
    })
