"""Nested p-feature forecasting and variable-origin evaluation.

Scenario data carries only owners, day and season. The richer training-time
features (users, trans, demand) are first forecast from the scenario features
and appended as ``p_users``, ``p_trans`` and ``p_demand``; the consumption
model is then trained on the true feature and fed its forecast at test time.

Refinement may re-forecast ``p_trans`` and ``p_demand`` from ``p_users``. A
feature is never forecast from ``p_trans`` for demand: a transaction count
does not bound the energy that can be drawn, so the causal order is
users -> trans and users -> demand only.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import CausalityError, DataError
from .forecasters import FAMILIES, Family, FamilySettings, TrainedForecaster, fit_forecaster
from .metrics import mape
from .preprocess import PERIOD, detect_outliers, impute_array, replace_outliers
from .series import DailyClusterSeries, reindex_contiguous

O_FEATURES = ("users", "trans", "demand")
P_FEATURES = tuple(f"p_{f}" for f in O_FEATURES)
BASE_COLUMNS = ("date", "owners", "day", "season")
FEATURE_SETS = ("base", "+p_users", "+p_trans", "+p_demand")
ORIGINS = (70, 80, 90)
# target -> o-features it may be re-forecast from
CAUSAL_SOURCES: dict[str, tuple[str, ...]] = {"trans": ("users",), "demand": ("users",)}
TREATED = ("users", "trans", "demand", "consumed")


class FitAudit:
    """Records the dates every model was trained on, for leakage assertions."""

    def __init__(self):
        self.fits: list[tuple[str, pd.Timestamp, pd.Timestamp]] = []

    def record(self, label: str, frame: pd.DataFrame) -> None:
        if len(frame):
            dates = pd.to_datetime(frame["date"])
            self.fits.append((label, dates.min(), dates.max()))

    def latest(self) -> pd.Timestamp | None:
        return max((f[2] for f in self.fits), default=None)


def prepare_series(series: DailyClusterSeries | pd.DataFrame, period: int = PERIOD,
                   outliers: bool = True) -> tuple[pd.DataFrame, dict]:
    """Contiguous daily frame with gaps imputed and outliers replaced.

    Returns the frame and a report of how many days were imputed and which
    were treated as outliers, per column.
    """
    if isinstance(series, pd.DataFrame):
        series = DailyClusterSeries(0, series, period)
    df = reindex_contiguous(series)
    report: dict = {"days": len(df), "imputed": {}, "outliers": {}}
    for col in TREATED:
        y = df[col].to_numpy(dtype=float)
        report["imputed"][col] = int(np.isnan(y).sum())
        y = impute_array(y, period)
        idx = detect_outliers(y, period) if outliers and len(y) >= 2 * period else []
        report["outliers"][col] = [str(df["date"].iloc[i]) for i in idx]
        df[col] = replace_outliers(y, idx, period)
    return df, report


def _base(frame: pd.DataFrame) -> pd.DataFrame:
    return frame[list(BASE_COLUMNS)].reset_index(drop=True)


def _check_order(train: pd.DataFrame, test: pd.DataFrame) -> None:
    if len(train) == 0:
        raise DataError("empty training frame")
    if len(test) and pd.Timestamp(test["date"].iloc[0]) <= pd.Timestamp(train["date"].iloc[-1]):
        raise DataError("scenario rows must start after the training period")


def _fit(family, train, target, numeric, settings, audit, label) -> TrainedForecaster:
    if audit is not None:
        audit.record(label, train)
    return fit_forecaster(family, train, train[target].to_numpy(dtype=float), numeric, settings)


def build_p_features(train: pd.DataFrame, test_base: pd.DataFrame, family, settings=None,
                     audit: FitAudit | None = None) -> pd.DataFrame:
    """Append a base-feature forecast of every o-feature to the scenario frame."""
    _check_order(train, test_base)
    out = test_base.reset_index(drop=True).copy()
    for f in O_FEATURES:
        model = _fit(family, train, f, ("owners",), settings, audit, f"p_{f}")
        out[f"p_{f}"] = model.predict(_base(out)) if len(out) else np.zeros(0)
    return out


def check_causal(target: str, source: str) -> None:
    if source not in CAUSAL_SOURCES.get(target, ()):
        raise CausalityError(f"p_{target} may not be forecast from p_{source}")


@dataclass
class RefineDecision:
    target: str
    source: str
    replaced: bool
    incumbent_mape: float | None = None
    candidate_mape: float | None = None


def refine_p_features(train: pd.DataFrame, frame: pd.DataFrame, family, settings=None,
                      actuals: pd.DataFrame | None = None, decisions: Mapping[str, bool] | None = None,
                      sources: Mapping[str, Sequence[str]] | None = None,
                      audit: FitAudit | None = None) -> tuple[pd.DataFrame, list[RefineDecision]]:
    """One pass over targets in causal order, swapping in better re-forecasts.

    With ``actuals`` (evaluation) a candidate replaces the incumbent only if
    its MAPE is strictly lower. Without them (deployment) the boolean
    ``decisions`` recorded during evaluation are replayed; targets without a
    recorded decision keep the incumbent.
    """
    sources = CAUSAL_SOURCES if sources is None else sources
    for target, srcs in sources.items():
        for s in srcs:
            check_causal(target, s)
    missing = [c for c in P_FEATURES if c not in frame.columns]
    if missing:
        raise DataError(f"frame lacks p-features {missing}")
    _check_order(train, frame)
    out = frame.reset_index(drop=True).copy()
    log: list[RefineDecision] = []
    for target in O_FEATURES:
        for src in sources.get(target, ()):
            if actuals is None and not (decisions or {}).get(target, False):
                log.append(RefineDecision(target, src, False))
                continue
            model = _fit(family, train, target, ("owners", src), settings, audit, f"p_{target}<-{src}")
            scen = _base(out).assign(**{src: out[f"p_{src}"].to_numpy()})
            cand = model.predict(scen)
            if actuals is None:
                out[f"p_{target}"] = cand
                log.append(RefineDecision(target, src, True))
                continue
            truth = actuals[target].to_numpy(dtype=float)
            inc_m = mape(truth, out[f"p_{target}"].to_numpy())
            cand_m = mape(truth, cand)
            better = cand_m < inc_m
            if better:
                out[f"p_{target}"] = cand
            log.append(RefineDecision(target, src, better, inc_m, cand_m))
    return out, log


def _feature_of(feature_set: str) -> str | None:
    if feature_set not in FEATURE_SETS:
        raise DataError(f"unknown feature set {feature_set!r}; expected one of {FEATURE_SETS}")
    return None if feature_set == "base" else feature_set[len("+p_"):]


def forecast_consumption(train: pd.DataFrame, frame: pd.DataFrame, family, feature_set: str = "base",
                         settings=None, audit: FitAudit | None = None, target: str = "consumed") -> np.ndarray:
    """Consumption forecast using base features plus at most one p-feature.

    The model trains on the true o-feature and predicts from its p-feature.
    """
    feat = _feature_of(feature_set)
    _check_order(train, frame)
    numeric = ("owners",) if feat is None else ("owners", feat)
    scen = _base(frame)
    if feat is not None:
        col = f"p_{feat}"
        if col not in frame.columns:
            raise DataError(f"feature set {feature_set} needs column {col}")
        scen[feat] = frame[col].to_numpy(dtype=float)
    model = _fit(family, train, target, numeric, settings, audit, f"{target}[{feature_set}]")
    return model.predict(scen)


def forecast_users(train: pd.DataFrame, frame: pd.DataFrame, family, settings=None,
                   features: Sequence[str] = ("owners", "day", "season"),
                   audit: FitAudit | None = None) -> np.ndarray:
    """Users forecast from the scenario features alone."""
    extra = [f for f in features if f not in ("owners", "day", "season")]
    if extra:
        raise DataError(f"users are forecast from scenario features only, got {extra}")
    _check_order(train, frame)
    model = _fit(family, train, "users", ("owners",), settings, audit, "users")
    return model.predict(_base(frame))


def origin_cuts(n: int, origins: Iterable[int] = ORIGINS) -> list[int]:
    cuts = [n * pct // 100 for pct in origins]
    if any(c < 1 or c >= n for c in cuts):
        raise DataError(f"series of length {n} too short for origins {tuple(origins)}")
    return cuts


@dataclass
class OriginEvaluation:
    origins: tuple[int, ...]
    test_lengths: list[int]
    mapes: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.mapes))


def variable_origin_eval(frame: pd.DataFrame, recipe: Callable[[pd.DataFrame, pd.DataFrame], np.ndarray],
                         target: str = "consumed", origins: Sequence[int] = ORIGINS) -> OriginEvaluation:
    """Fit on each chronological prefix, score MAPE on the rest.

    ``recipe(train, test_base)`` must return the forecast for ``test_base``;
    it only ever sees the scenario columns of the test period.
    """
    frame = frame.reset_index(drop=True)
    cuts = origin_cuts(len(frame), origins)
    mapes, lengths = [], []
    for cut in cuts:
        train, test = frame.iloc[:cut].reset_index(drop=True), frame.iloc[cut:].reset_index(drop=True)
        pred = recipe(train, _base(test))
        mapes.append(mape(test[target].to_numpy(dtype=float), pred))
        lengths.append(len(test))
    return OriginEvaluation(tuple(origins), lengths, mapes)


@dataclass
class EvaluationReport:
    """MAPE matrix: one row per (cluster, target, family, feature set)."""

    origins: tuple[int, ...] = ORIGINS
    rows: list[dict] = field(default_factory=list)
    decisions: list[dict] = field(default_factory=list)
    preprocessing: dict = field(default_factory=dict)

    def add(self, cluster, target, family, feature_set, mapes) -> None:
        row = {"cluster": cluster, "target": target, "family": Family(family).value,
               "feature_set": feature_set}
        for pct, m in zip(self.origins, mapes):
            row[f"mape_{pct}"] = float(m)
        row["mean_mape"] = float(np.mean(mapes))
        self.rows.append(row)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def to_csv(self) -> str:
        return self.frame().to_csv(index=False, float_format="%.6f", lineterminator="\n")

    def to_json(self) -> str:
        return json.dumps({"origins": list(self.origins), "rows": self.rows, "decisions": self.decisions,
                           "preprocessing": self.preprocessing}, indent=2, sort_keys=True)

    def matrix(self, target: str = "consumed") -> pd.DataFrame:
        """Feature sets down, families across, mean MAPE in the cells."""
        df = self.frame()
        df = df[df["target"] == target]
        m = df.pivot_table(index=["cluster", "feature_set"], columns="family", values="mean_mape")
        rank = {fs: i for i, fs in enumerate(FEATURE_SETS)}
        m = m.sort_index(key=lambda ix: ix.map(rank) if ix.name == "feature_set" else ix)
        return m[[f.value for f in FAMILIES if f.value in m.columns]]

    def majority_decisions(self, cluster, family) -> dict[str, bool]:
        votes: dict[str, Counter] = {}
        for d in self.decisions:
            if d["cluster"] == cluster and d["family"] == Family(family).value:
                votes.setdefault(d["target"], Counter())[d["replaced"]] += 1
        return {t: c[True] > c[False] for t, c in votes.items()}


def evaluate_cluster(df: pd.DataFrame, cluster, families: Sequence = FAMILIES,
                     feature_sets: Sequence[str] = FEATURE_SETS, settings: FamilySettings | None = None,
                     origins: Sequence[int] = ORIGINS, report: EvaluationReport | None = None,
                     audit_hook: Callable[[int, FitAudit, pd.DataFrame], None] | None = None,
                     ) -> EvaluationReport:
    """All (family, feature set) cells of one cluster under variable-origin evaluation.

    ``audit_hook(origin, audit, test)`` is called after each origin with the
    record of every fit made for it.
    """
    settings = settings or FamilySettings()
    report = report or EvaluationReport(tuple(origins))
    df = df.reset_index(drop=True)
    cuts = origin_cuts(len(df), origins)
    for fam in families:
        fam = Family(fam)
        users_m: list[float] = []
        cons_m: dict[str, list[float]] = {fs: [] for fs in feature_sets}
        for pct, cut in zip(origins, cuts):
            train, test = df.iloc[:cut].reset_index(drop=True), df.iloc[cut:].reset_index(drop=True)
            audit = FitAudit()
            frame = build_p_features(train, _base(test), fam, settings, audit)
            users_m.append(mape(test["users"].to_numpy(dtype=float), frame["p_users"].to_numpy()))
            frame, log = refine_p_features(train, frame, fam, settings, actuals=test, audit=audit)
            for d in log:
                report.decisions.append({"cluster": cluster, "family": fam.value, "origin": pct,
                                         "target": d.target, "source": d.source, "replaced": d.replaced,
                                         "incumbent_mape": d.incumbent_mape, "candidate_mape": d.candidate_mape})
            for fs in feature_sets:
                pred = forecast_consumption(train, frame, fam, fs, settings, audit)
                cons_m[fs].append(mape(test["consumed"].to_numpy(dtype=float), pred))
            if audit_hook is not None:
                audit_hook(pct, audit, test)
        report.add(cluster, "users", fam, "base", users_m)
        for fs in feature_sets:
            report.add(cluster, "consumed", fam, fs, cons_m[fs])
    return report


def deploy_forecast(df: pd.DataFrame, scenario: pd.DataFrame, family, feature_set: str = "base",
                    settings: FamilySettings | None = None,
                    decisions: Mapping[str, bool] | None = None) -> pd.DataFrame:
    """Users and consumption forecasts for scenario rows following the series.

    Refinement replays ``decisions`` (typically the evaluation-time majority).
    """
    df = df.reset_index(drop=True)
    frame = build_p_features(df, _base(scenario), family, settings)
    frame, _ = refine_p_features(df, frame, family, settings, decisions=decisions or {})
    out = _base(scenario)
    out["users"] = frame["p_users"].to_numpy()
    out["consumed"] = forecast_consumption(df, frame, family, feature_set, settings)
    return out
