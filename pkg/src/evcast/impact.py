"""Peak-hour feeder load under consumption control and user control.

Consumption control trims every plugged-in EV's energy, so the load stays
at the rated power and only the charging time shrinks. User control defers a
share of plugged-in EVs to off-peak, so the load shrinks and the charging
time of the rest is unchanged.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np
import pandas as pd

from .errors import DataError
from .series import DAYS, SEASONS

LEVELS = (0.0, 0.2, 0.4, 0.6, 0.8)
PENETRATIONS = (0.2, 0.4, 0.6, 0.8, 1.0)

# Per-cluster charging frequency and mean energy per charge of the trial owners.
TRIAL_RATES = {1: 0.68, 2: 0.44, 3: 0.36}
TRIAL_KWH = {1: 5.68, 2: 14.30, 3: 26.80}


class PolicyKind(str, Enum):
    CONSUMPTION = "ConsumptionControl"
    USER = "UserControl"


@dataclass(frozen=True)
class ControlPolicy:
    kind: PolicyKind
    level: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if not any(abs(self.level - g) < 1e-12 for g in LEVELS):
            raise DataError(f"control level {self.level} not in grid {LEVELS}")


def _default_mix():
    return {1: {1: 1.0}, 2: {2: 1.0}, 3: {1: 0.7, 3: 0.3}, 4: {2: 0.7, 3: 0.3}}


@dataclass(frozen=True)
class NetworkConfig:
    transformer_kva: float = 500.0
    n_feeders: int = 4
    households_per_feeder: int = 96
    base_load_kva_per_household: float = 1.0
    power_factor: float = 0.98
    rating_kw: Mapping[int, float] = field(default_factory=lambda: {1: 3.5, 2: 7.0, 3: 7.0})
    peak_window_h: float = 2.0
    peak_user_fraction: Mapping[int, float] = field(default_factory=lambda: {1: 0.38, 2: 0.35, 3: 0.34})
    feeder_mix: Mapping[int, Mapping[int, float]] = field(default_factory=_default_mix)

    @property
    def feeder_capacity_kva(self) -> float:
        return self.transformer_kva / self.n_feeders

    def validate(self) -> "NetworkConfig":
        if self.transformer_kva <= 0 or self.n_feeders < 1 or self.households_per_feeder < 0:
            raise DataError("capacities and counts must be positive")
        if not 0 < self.power_factor <= 1:
            raise DataError("power factor must lie in (0, 1]")
        if any(r <= 0 for r in self.rating_kw.values()):
            raise DataError("ratings must be positive")
        for f, mix in self.feeder_mix.items():
            if abs(sum(mix.values()) - 1.0) > 1e-9 or any(s < 0 for s in mix.values()):
                raise DataError(f"feeder {f} cluster shares must be non-negative and sum to 1")
            missing = [c for c in mix if c not in self.rating_kw or c not in self.peak_user_fraction]
            if missing:
                raise DataError(f"feeder {f}: no rating or peak fraction for clusters {missing}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("rating_kw", "peak_user_fraction"):
            d[key] = {str(k): v for k, v in d[key].items()}
        d["feeder_mix"] = {str(f): {str(c): s for c, s in m.items()} for f, m in self.feeder_mix.items()}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkConfig":
        d = dict(d)
        for key in ("rating_kw", "peak_user_fraction"):
            if key in d:
                d[key] = {int(k): float(v) for k, v in d[key].items()}
        if "feeder_mix" in d:
            d["feeder_mix"] = {int(f): {int(c): float(s) for c, s in m.items()} for f, m in d["feeder_mix"].items()}
        d.pop("feeder_capacity_kva", None)
        return cls(**d)


class UserForecastProvider(Protocol):
    def users(self, cluster: int, n_evs: float, season: str, day: str | None = None) -> float: ...

    def kwh_per_user(self, cluster: int, n_evs: float, season: str, day: str | None = None) -> float: ...


@dataclass(frozen=True)
class DeterministicRateProvider:
    """Users = owners x charging frequency; energy = mean kWh per charge."""

    rates: Mapping[int, float] = field(default_factory=lambda: dict(TRIAL_RATES))
    kwh: Mapping[int, float] = field(default_factory=lambda: dict(TRIAL_KWH))

    def users(self, cluster, n_evs, season, day=None):
        return n_evs * self.rates[cluster]

    def kwh_per_user(self, cluster, n_evs, season, day=None):
        return self.kwh[cluster]


class ForecastProvider:
    """Provider backed by trained users (and optionally consumption) forecasters.

    Without ``day`` the forecast is averaged over the seven weekdays of the
    season. Energy per user is the consumption forecast over the users
    forecast, falling back to ``fallback`` when no consumption model is given.
    """

    def __init__(self, users_models: Mapping[int, object], consumption_models: Mapping[int, object] | None = None,
                 fallback: DeterministicRateProvider | None = None):
        self.users_models = dict(users_models)
        self.consumption_models = dict(consumption_models or {})
        self.fallback = fallback or DeterministicRateProvider()

    @staticmethod
    def _frame(n_evs, season, day):
        days = DAYS if day is None else (day,)
        return pd.DataFrame({"date": pd.NaT, "owners": float(n_evs), "day": list(days), "season": season})

    def _mean(self, model, n_evs, season, day) -> float:
        return float(np.mean(model.predict(self._frame(n_evs, season, day))))

    def users(self, cluster, n_evs, season, day=None):
        if n_evs == 0:
            return 0.0
        return max(0.0, self._mean(self.users_models[cluster], n_evs, season, day))

    def kwh_per_user(self, cluster, n_evs, season, day=None):
        model = self.consumption_models.get(cluster)
        u = self.users(cluster, n_evs, season, day)
        if model is None or u <= 0:
            return self.fallback.kwh_per_user(cluster, n_evs, season, day)
        return max(0.0, self._mean(model, n_evs, season, day)) / u


def peak_users(cluster: int, n_evs: float, provider, season: str, day: str | None = None,
               config: NetworkConfig | None = None) -> float:
    if n_evs < 0:
        raise DataError("n_evs must be non-negative")
    if n_evs == 0:
        return 0.0
    cfg = config or NetworkConfig()
    return provider.users(cluster, n_evs, season, day) * cfg.peak_user_fraction[cluster]


def ev_load_kva(users_by_cluster: Mapping[int, float], policy: ControlPolicy,
                config: NetworkConfig | None = None) -> float:
    cfg = config or NetworkConfig()
    share = 1.0 - policy.level if policy.kind is PolicyKind.USER else 1.0
    return sum(u * share * cfg.rating_kw[c] for c, u in sorted(users_by_cluster.items())) / cfg.power_factor


def charging_duration_h(cluster: int, kwh_per_user: float, policy: ControlPolicy,
                        config: NetworkConfig | None = None) -> float:
    cfg = config or NetworkConfig()
    rating = cfg.rating_kw[cluster]
    if rating <= 0:
        raise DataError("rating must be positive")
    share = 1.0 - policy.level if policy.kind is PolicyKind.CONSUMPTION else 1.0
    return kwh_per_user * share / rating


@dataclass
class ImpactResult:
    feeder: int
    season: str
    penetration: float
    policy: str
    level: float
    peak_users: dict[int, float]
    ev_load_kva: float
    base_load_kva: float
    agg_load_kva: float
    margin_kva: float
    duration_h: dict[int, float]

    @property
    def overloaded(self) -> bool:
        return self.margin_kva < 0

    def to_row(self) -> dict:
        row = {k: getattr(self, k) for k in ("feeder", "season", "penetration", "policy", "level",
                                             "ev_load_kva", "base_load_kva", "agg_load_kva", "margin_kva")}
        for c in (1, 2, 3):
            row[f"peak_users_c{c}"] = self.peak_users.get(c, 0.0)
        for c in (1, 2, 3):
            row[f"duration_h_c{c}"] = self.duration_h.get(c, float("nan"))
        return row


def aggregate_load(feeder: int, season: str, penetration: float, policy: ControlPolicy, provider=None,
                   config: NetworkConfig | None = None, day: str | None = None) -> ImpactResult:
    cfg = config or NetworkConfig()
    provider = provider or DeterministicRateProvider()
    if not 0 <= penetration <= 1:
        raise DataError("penetration must lie in [0, 1]")
    if feeder not in cfg.feeder_mix:
        raise DataError(f"unknown feeder {feeder}")
    households = cfg.households_per_feeder
    users, durations = {}, {}
    for c, share in sorted(cfg.feeder_mix[feeder].items()):
        n = households * penetration * share
        users[c] = peak_users(c, n, provider, season, day, cfg)
        kwh = provider.kwh_per_user(c, n, season, day) if n > 0 else provider.kwh_per_user(c, 1.0, season, day)
        durations[c] = charging_duration_h(c, kwh, policy, cfg)
    ev = ev_load_kva(users, policy, cfg)
    base = households * cfg.base_load_kva_per_household
    agg = base + ev
    return ImpactResult(feeder, season, penetration, policy.kind.value, policy.level, users, ev, base, agg,
                        cfg.feeder_capacity_kva - agg, durations)


def sweep(config: NetworkConfig | None = None, provider=None, penetrations: Sequence[float] = PENETRATIONS,
          levels: Sequence[float] = LEVELS, seasons: Sequence[str] = SEASONS,
          feeders: Sequence[int] | None = None, kinds: Iterable[PolicyKind] = tuple(PolicyKind),
          ) -> list[ImpactResult]:
    """Every (feeder, season, penetration, policy, level) cell in canonical order."""
    cfg = (config or NetworkConfig()).validate()
    provider = provider or DeterministicRateProvider()
    feeders = sorted(cfg.feeder_mix) if feeders is None else list(feeders)
    out = [aggregate_load(f, s, p, ControlPolicy(k, c), provider, cfg)
           for f in feeders for s in seasons for p in penetrations for k in kinds for c in levels]
    season_rank = {s: i for i, s in enumerate(SEASONS)}
    out.sort(key=lambda r: (r.feeder, season_rank[r.season], r.penetration, r.policy, r.level))
    return out


def min_control_for_capacity(feeder: int, season: str, penetration: float, provider=None,
                             config: NetworkConfig | None = None, levels: Sequence[float] = LEVELS,
                             ) -> float | None:
    """Smallest user-control level keeping the feeder within capacity, else None."""
    cfg = config or NetworkConfig()
    for c in sorted(levels):
        r = aggregate_load(feeder, season, penetration, ControlPolicy(PolicyKind.USER, c), provider, cfg)
        if r.agg_load_kva <= cfg.feeder_capacity_kva:
            return c
    return None


def results_frame(results: Sequence[ImpactResult]) -> pd.DataFrame:
    return pd.DataFrame([r.to_row() for r in results])


def plot_data(results: Sequence[ImpactResult], config: NetworkConfig | None = None) -> dict[str, pd.DataFrame]:
    """Long-format tables behind the load and duration figures."""
    cfg = config or NetworkConfig()
    df = results_frame(results)
    load = df[["feeder", "season", "policy", "level", "penetration", "ev_load_kva", "agg_load_kva"]].copy()
    load["capacity_kva"] = cfg.feeder_capacity_kva
    dur = df.melt(id_vars=["feeder", "season", "policy", "level", "penetration"],
                  value_vars=[c for c in df.columns if c.startswith("duration_h_c")],
                  var_name="cluster", value_name="duration_h").dropna()
    dur["cluster"] = dur["cluster"].str[-1].astype(int)
    dur["peak_window_h"] = cfg.peak_window_h
    dur = dur.sort_values(["feeder", "cluster", "season", "policy", "level", "penetration"], kind="stable")
    return {"load_vs_penetration": load.reset_index(drop=True), "duration_vs_penetration": dur.reset_index(drop=True)}
