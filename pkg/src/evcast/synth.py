"""Synthetic charging-trial generator calibrated to per-cluster owner statistics.

Owners join over time and, once joined, charge on a day with a probability
set by their own rate and the weekday and season multipliers. A charging day
holds one session, or optionally one plus a Poisson number of extra plug-ins. Session energy is
a truncated normal whose location is solved so the expected per-owner mean
matches the cluster target despite truncation at the battery size.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timedelta
from typing import Mapping

import numpy as np
from scipy import optimize, stats

from .errors import DataError
from .ingest import ChargingTransaction, EvType, TrialStage
from .series import SEASONS, season_of


@dataclass(frozen=True)
class ClusterStats:
    capacities: tuple[float, ...]
    weights: tuple[float, ...]
    mean_kwh_per_charge: float
    charges_per_day: float
    plugins_per_user: float
    rating_kw: float
    ev_type: str = "BEV"


# Capacity lists span each band with common battery sizes; the 4.4 kWh
# entry gets little weight because the truncation at a small battery would
# otherwise drag the cluster mean far below its target.
DEFAULT_CLUSTERS: dict[int, ClusterStats] = {
    1: ClusterStats((4.4, 8.8, 12.0, 16.0, 18.7), (0.04, 0.16, 0.45, 0.2, 0.15), 5.68, 0.68, 1.34, 3.5, "PHEV"),
    2: ClusterStats((22.0, 24.0, 30.0, 33.0, 40.0, 41.0), (0.2, 0.15, 0.2, 0.15, 0.15, 0.15), 14.30, 0.44, 1.25, 7.0),
    3: ClusterStats((60.0, 64.0, 75.0, 85.0, 90.0, 100.0), (0.15, 0.25, 0.2, 0.15, 0.1, 0.15), 26.80, 0.36, 1.21, 7.0),
}

WEEKDAY_MULT = (1.05, 1.0, 1.0, 1.0, 0.95, 0.95, 1.05)
SEASON_MULT = (1.1, 1.0, 0.9, 1.0)
PEAK_START_H, PEAK_END_H = 17, 19


@dataclass(frozen=True)
class SynthConfig:
    horizon_days: int = 365
    start: str = "2017-02-01"
    owners_final: Mapping[int, int] = field(default_factory=lambda: {1: 120, 2: 200, 3: 80})
    arrival: str = "linear"
    clusters: Mapping[int, ClusterStats] = field(default_factory=lambda: dict(DEFAULT_CLUSTERS))
    weekday_mult: tuple[float, ...] = WEEKDAY_MULT
    season_mult: tuple[float, ...] = SEASON_MULT
    peak_plug_share: float = 0.28
    noise_cv: float = 0.3
    rate_spread: float = 0.2
    # spread each charging day's rate over 1 + Poisson extra plug-ins so the
    # plug-ins per user match ``plugins_per_user``; off keeps one per day
    multi_plugin: bool = False
    seed: int = 0

    def validate(self) -> "SynthConfig":
        if self.horizon_days < 1:
            raise DataError("horizon_days must be positive")
        if self.arrival not in ("linear", "step"):
            raise DataError("arrival must be 'linear' or 'step'")
        if len(self.weekday_mult) != 7 or len(self.season_mult) != 4:
            raise DataError("need 7 weekday and 4 season multipliers")
        for name, m in (("weekday", self.weekday_mult), ("season", self.season_mult)):
            if abs(float(np.mean(m)) - 1.0) > 1e-9 or min(m) < 0:
                raise DataError(f"{name} multipliers must be non-negative and average to 1")
        if not 0 <= self.peak_plug_share <= 1:
            raise DataError("peak_plug_share must lie in [0, 1]")
        if not 0 < self.noise_cv or not 0 <= self.rate_spread < 1:
            raise DataError("noise_cv must be positive and rate_spread in [0, 1)")
        for c, n in self.owners_final.items():
            if n < 0:
                raise DataError("owners_final must be non-negative")
            if n and c not in self.clusters:
                raise DataError(f"no statistics for cluster {c}")
        for c, s in self.clusters.items():
            if len(s.capacities) != len(s.weights) or abs(sum(s.weights) - 1) > 1e-9:
                raise DataError(f"cluster {c}: capacity weights must match capacities and sum to 1")
            if s.plugins_per_user < 1 or s.charges_per_day <= 0 or s.rating_kw <= 0:
                raise DataError(f"cluster {c}: invalid rates")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["owners_final"] = {str(k): v for k, v in self.owners_final.items()}
        d["clusters"] = {str(k): asdict(v) for k, v in self.clusters.items()}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthConfig":
        d = dict(d)
        if "owners_final" in d:
            d["owners_final"] = {int(k): int(v) for k, v in d["owners_final"].items()}
        if "clusters" in d:
            d["clusters"] = {int(k): ClusterStats(**{**v, "capacities": tuple(v["capacities"]),
                                                      "weights": tuple(v["weights"])})
                             for k, v in d["clusters"].items()}
        for key in ("weekday_mult", "season_mult"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _truncated_mean(loc, sd, cap):
    a, b = (0.0 - loc) / sd, (cap - loc) / sd
    return stats.truncnorm.mean(a, b, loc=loc, scale=sd)


def calibrate_location(s: ClusterStats, cv: float) -> float:
    """Normal location whose capacity-weighted truncated mean equals the target."""
    sd = cv * s.mean_kwh_per_charge
    caps, w = np.asarray(s.capacities), np.asarray(s.weights)

    def gap(loc):
        return float(np.sum(w * _truncated_mean(loc, sd, caps))) - s.mean_kwh_per_charge

    hi = s.mean_kwh_per_charge
    while gap(hi) < 0:
        hi *= 1.5
    return float(optimize.brentq(gap, 0.0, hi, xtol=1e-12))


def arrival_days(n: int, horizon: int, schedule: str = "linear") -> np.ndarray:
    """Join day of each owner: evenly over the first half, or in two steps."""
    if n == 0:
        return np.zeros(0, dtype=int)
    half = max(1, horizon // 2)
    if schedule == "linear":
        return (np.arange(n) * half) // n
    return np.where(np.arange(n) < (n + 1) // 2, 0, half)


def plug_hours(rng, n: int, share: float) -> np.ndarray:
    """Hours of day; the peak window gets ``share`` of the mass, the rest is uniform."""
    width = PEAK_END_H - PEAK_START_H
    peak = rng.random(n) < share
    h = np.where(peak, rng.uniform(PEAK_START_H, PEAK_END_H, n), rng.uniform(0, 24 - width, n))
    return np.where(~peak & (h >= PEAK_START_H), h + width, h)


def _stage(day: int, horizon: int) -> TrialStage:
    third = horizon / 3
    return TrialStage.UNCONTROLLED if day < third else (TrialStage.T1 if day < 2 * third else TrialStage.T2)


def _owner_sessions(cfg: SynthConfig, cluster: int, idx: int, join: int, loc: float,
                    start: date) -> list[ChargingTransaction]:
    s = cfg.clusters[cluster]
    rng = np.random.default_rng([cfg.seed, cluster, idx])
    cap = float(rng.choice(s.capacities, p=s.weights))
    rate = s.charges_per_day * rng.uniform(1 - cfg.rate_spread, 1 + cfg.rate_spread)
    sd = cfg.noise_cv * s.mean_kwh_per_charge
    a, b = (0.0 - loc) / sd, (cap - loc) / sd
    pid = f"P{cluster}{idx:05d}"
    days = np.arange(join, cfg.horizon_days)
    dates = [start + timedelta(days=int(k)) for k in days]
    mult = np.array([cfg.weekday_mult[d.weekday()] * cfg.season_mult[SEASONS.index(season_of(d))]
                     for d in dates])
    per_day = s.plugins_per_user if cfg.multi_plugin else 1.0
    p = np.minimum(1.0, rate * mult / per_day)
    charge = rng.random(len(days)) < p
    charge[0] = True  # the join day is by definition the owner's first charge
    counts = 1 + rng.poisson(per_day - 1.0, size=int(charge.sum()))
    total = int(counts.sum())
    hours = plug_hours(rng, total, cfg.peak_plug_share)
    energy = np.clip(stats.truncnorm.rvs(a, b, loc=loc, scale=sd, size=total, random_state=rng), 1e-6, cap)
    delays = rng.integers(0, 600, size=total)
    idle = rng.integers(0, 8 * 3600, size=total)
    day_idx = np.repeat(np.flatnonzero(charge), counts)
    # order sessions within a day by clock time
    order = np.lexsort((hours, day_idx))
    out = []
    for j in order:
        d = dates[day_idx[j]]
        e = round(float(energy[j]), 6)
        sec = min(int(hours[j] * 3600), 86399)
        plug_in = datetime.combine(d, datetime.min.time()) + timedelta(seconds=sec)
        active = plug_in + timedelta(seconds=int(delays[j]))
        charge_s = int(np.ceil(e / s.rating_kw * 3600))
        plug_out = active + timedelta(seconds=charge_s + int(idle[j]))
        out.append(ChargingTransaction(
            charger_id=f"C{cluster}{idx:05d}", participant_id=pid, car_kw=s.rating_kw, car_kwh=cap,
            group_id=f"G{cluster}", trial_stage=_stage(int(days[day_idx[j]]), cfg.horizon_days),
            plug_in=plug_in, plug_out=plug_out, consumed_kwh=e, active_start=active,
            car_make="Synthetic", car_model=f"{cap:g}kWh", ev_type=EvType(s.ev_type)))
    return out


def generate_trial(config: SynthConfig | None = None) -> list[ChargingTransaction]:
    """All sessions of all owners, ordered by (plug-in time, participant)."""
    cfg = (config or SynthConfig()).validate()
    start = date.fromisoformat(cfg.start)
    txns: list[ChargingTransaction] = []
    for cluster in sorted(cfg.owners_final):
        n = cfg.owners_final[cluster]
        if n == 0:
            continue
        loc = calibrate_location(cfg.clusters[cluster], cfg.noise_cv)
        for idx, join in enumerate(arrival_days(n, cfg.horizon_days, cfg.arrival)):
            txns.extend(_owner_sessions(cfg, cluster, idx, int(join), loc, start))
    txns.sort(key=lambda t: (t.plug_in, t.participant_id))
    return txns


def true_assignments(txns) -> dict[str, int]:
    """Generator-side cluster of each participant (encoded in its id)."""
    return {t.participant_id: int(t.participant_id[1]) for t in txns}


def peak_share(txns) -> float:
    txns = list(txns)
    if not txns:
        raise DataError("no transactions")
    hits = sum(PEAK_START_H <= t.plug_in.hour < PEAK_END_H for t in txns)
    return hits / len(txns)
