"""Day-wise per-cluster series built from cleaned transactions."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from datetime import date
from typing import Iterable, Mapping

import pandas as pd

from .errors import DataError
from .ingest import ChargingTransaction

PERIOD = 7
DAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
SEASONS = ("Winter", "Spring", "Summer", "Autumn")
COLUMNS = ("date", "day", "season", "owners", "users", "trans", "demand", "consumed")
NUMERIC = ("owners", "users", "trans", "demand", "consumed")

_SEASON_BY_MONTH = {12: "Winter", 1: "Winter", 2: "Winter", 3: "Spring", 4: "Spring", 5: "Spring",
                    6: "Summer", 7: "Summer", 8: "Summer", 9: "Autumn", 10: "Autumn", 11: "Autumn"}


def season_of(d: date) -> str:
    """Meteorological season (Dec-Feb winter, ...)."""
    return _SEASON_BY_MONTH[d.month]


def day_of(d: date) -> str:
    return DAYS[d.weekday()]


@dataclass
class DailyClusterSeries:
    cluster: int
    frame: pd.DataFrame
    period: int = PERIOD

    def __len__(self) -> int:
        return len(self.frame)

    def to_csv(self) -> str:
        df = self.frame.copy()
        df["date"] = pd.to_datetime(df["date"]).dt.strftime("%Y-%m-%d")
        return df.to_csv(index=False, float_format="%.10g", lineterminator="\n")

    @classmethod
    def from_csv(cls, cluster: int, path_or_buf) -> "DailyClusterSeries":
        df = pd.read_csv(path_or_buf)
        missing = [c for c in COLUMNS if c not in df.columns]
        if missing:
            raise DataError(f"series file missing columns {missing}")
        df["date"] = pd.to_datetime(df["date"]).dt.date
        df[list(NUMERIC)] = df[list(NUMERIC)].astype(float)
        return cls(cluster, df[list(COLUMNS)].reset_index(drop=True))


def build_daily_series(
    txns: Iterable[ChargingTransaction], cluster_map: Mapping[str, int]
) -> list[DailyClusterSeries]:
    """Aggregate sessions into one day-wise frame per cluster.

    Only days with at least one session appear; gaps are left for imputation.
    ``demand`` is the sum over sessions of battery capacity, i.e. each battery
    counted once per session that day. ``owners`` counts participants seen on
    or before the date.
    """
    per_day: dict[int, dict[date, list[ChargingTransaction]]] = defaultdict(lambda: defaultdict(list))
    for t in txns:
        if t.participant_id not in cluster_map:
            raise DataError(f"participant {t.participant_id!r} has no cluster assignment")
        per_day[cluster_map[t.participant_id]][t.plug_in.date()].append(t)

    out = []
    for cluster in sorted(per_day):
        days = per_day[cluster]
        seen: set[str] = set()
        rows = []
        for d in sorted(days):
            sessions = days[d]
            participants = {t.participant_id for t in sessions}
            seen |= participants
            rows.append({
                "date": d,
                "day": day_of(d),
                "season": season_of(d),
                "owners": float(len(seen)),
                "users": float(len(participants)),
                "trans": float(len(sessions)),
                "demand": float(sum(sorted(t.car_kwh for t in sessions))),
                "consumed": float(sum(sorted(t.consumed_kwh for t in sessions))),
            })
        out.append(DailyClusterSeries(cluster, pd.DataFrame(rows, columns=list(COLUMNS))))
    return out


def reindex_contiguous(series: DailyClusterSeries) -> pd.DataFrame:
    """Expand to every calendar day; counts on missing days become NaN.

    ``owners`` is carried forward because it is a cumulative count and is
    known exactly on days without sessions.
    """
    df = series.frame.copy()
    idx = pd.date_range(pd.Timestamp(df["date"].iloc[0]), pd.Timestamp(df["date"].iloc[-1]), freq="D")
    df.index = pd.to_datetime(df["date"])
    df = df.reindex(idx)
    df["owners"] = df["owners"].ffill()
    df["date"] = idx.date
    df["day"] = [day_of(d) for d in df["date"]]
    df["season"] = [season_of(d) for d in df["date"]]
    return df.reset_index(drop=True)
