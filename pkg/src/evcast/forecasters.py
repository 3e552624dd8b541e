"""One fit/predict surface over the four model families.

A :class:`TrainedForecaster` owns its feature encoder (fitted on the training
frame only), the family model, and a small training report. Frames passed to
``predict`` must start the day after the training frame ends; the ARIMA error
forecast and the LSTM lookback window both rely on that.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Sequence

import numpy as np
import pandas as pd

from .errors import DataError
from .features import FeatureEncoder
from .linear_models import (LinearModel, RegArimaModel, fit_reg_arima, fit_ts_regression,
                            forecast_reg_arima)
from .ml.gbt import GbtModel, fit_gbt
from .ml.lstm import LSTM_SPACE, LstmConfig, LstmModel, fit_lstm, tune_lstm
from .ml.tuning import GBT_SPACE, tune_gbt


class Family(str, Enum):
    REGRESSION = "Regression"
    REG_ARIMA = "RegArima"
    GBT = "Gbt"
    LSTM = "Lstm"


FAMILIES = tuple(Family)


@dataclass(frozen=True)
class FamilySettings:
    """Tuning budgets and search spaces shared by every fit in a run.

    ``full()`` uses the reference tuning budgets; ``fast()`` trims them
    so a whole evaluation matrix runs in minutes on one core.
    """

    gbt_space: dict | None = None
    gbt_budget: int = 108
    lstm_space: dict | None = None
    lstm_budget: int = 10
    lstm_epochs: int = 100
    cv_val_len: int = 7
    cv_max_splits: int | None = None
    arima_max_p: int = 5
    arima_max_q: int = 5
    arima_refine: bool = False
    seed: int = 0
    threads: int = 1

    @classmethod
    def full(cls, seed: int = 0, threads: int = 1) -> "FamilySettings":
        return cls(seed=seed, threads=threads)

    @classmethod
    def fast(cls, seed: int = 0, threads: int = 1) -> "FamilySettings":
        return cls(gbt_budget=4, lstm_space={"depth": (1,), "bidirectional": (False,), "units": (50,),
                                             "learning_rate": (1e-2,), "dropout": (0.0,)},
                   lstm_budget=1, lstm_epochs=15, cv_max_splits=2, arima_max_p=3, arima_max_q=3,
                   seed=seed, threads=threads)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("threads")  # never changes results, so kept out of artifacts
        return d


@dataclass
class TrainedForecaster:
    family: Family
    model: Any
    encoder: FeatureEncoder
    report: dict = field(default_factory=dict)

    @property
    def descriptor(self) -> list[str]:
        return self.encoder.columns

    def predict(self, frame: pd.DataFrame) -> np.ndarray:
        X = self.encoder.transform(frame)
        if len(X) == 0:
            return np.zeros(0)
        if self.family is Family.REGRESSION:
            return self.model.predict(X)
        if self.family is Family.REG_ARIMA:
            return forecast_reg_arima(self.model, X)
        return self.model.predict(X)

    def to_dict(self) -> dict:
        return {"family": self.family.value, "encoder": self.encoder.to_dict(),
                "model": self.model.to_dict(), "report": self.report}


def fit_forecaster(family: Family | str, frame: pd.DataFrame, y, numeric: Sequence[str] = ("owners",),
                   settings: FamilySettings | None = None) -> TrainedForecaster:
    """Fit one family on ``frame``'s encoded features against target ``y``."""
    family = Family(family)
    settings = settings or FamilySettings()
    y = np.asarray(y, dtype=float)
    if len(y) != len(frame):
        raise DataError("target length differs from frame length")
    if not np.all(np.isfinite(y)):
        raise DataError("target contains non-finite values")
    enc = FeatureEncoder(tuple(numeric)).fit(frame)
    X = enc.transform(frame)
    report: dict = {}
    if family is Family.REGRESSION:
        model: Any = fit_ts_regression(X, y, enc.columns)
    elif family is Family.REG_ARIMA:
        model = fit_reg_arima(X, y, enc.columns, settings.arima_max_p, settings.arima_max_q,
                              refine=settings.arima_refine)
        report["order"] = list(model.order)
    elif family is Family.GBT:
        tuned = tune_gbt(X, y, settings.gbt_space or GBT_SPACE, settings.gbt_budget, settings.seed,
                         val_len=settings.cv_val_len, max_splits=settings.cv_max_splits,
                         threads=settings.threads)
        model = fit_gbt(X, y, tuned.best)
        report.update(best=asdict(tuned.best), cv_mape=tuned.best_score, trace_csv=tuned.trace_csv(),
                      train_loss=model.train_loss)
    else:
        base = LstmConfig(epochs=settings.lstm_epochs, seed=settings.seed)
        tuned = tune_lstm(X, y, settings.lstm_space or LSTM_SPACE, settings.lstm_budget, settings.seed,
                          base=base, val_len=settings.cv_val_len, max_splits=settings.cv_max_splits,
                          threads=settings.threads)
        model = fit_lstm(X, y, tuned.best)
        report.update(best=asdict(tuned.best), cv_mape=tuned.best_score, trace_csv=tuned.trace_csv(),
                      loss_curve=model.loss_curve)
    return TrainedForecaster(family, model, enc, report)
