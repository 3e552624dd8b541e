"""Owner-level charging summaries, k-means and capacity bands."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .ingest import ChargingTransaction

MAX_ITER = 300
ELBOW_THRESHOLD = 0.10

# Battery-capacity bands (kWh) of the three owner clusters.
CAPACITY_BANDS: dict[int, tuple[float, float]] = {1: (4.4, 18.7), 2: (22.0, 41.0), 3: (60.0, 100.0)}


@dataclass(frozen=True)
class OwnerSummary:
    participant_id: str
    battery_kwh: float
    mean_kwh_per_charge: float
    charges_per_day: float
    n_transactions: int
    active_days: int


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignments: dict[str, int]
    wcss_curve: dict[int, float] = field(default_factory=dict)
    capacity_bands: dict[int, tuple[float, float]] = field(default_factory=dict)
    labels: np.ndarray | None = None
    wcss: float = 0.0
    n_iter: int = 0
    scale: tuple[list[float], list[float]] | None = None

    def to_json(self) -> str:
        payload = {
            "k": self.k,
            "centroids": np.asarray(self.centroids).tolist(),
            "assignments": self.assignments,
            "wcss_curve": {str(k): v for k, v in self.wcss_curve.items()},
            "capacity_bands": {str(k): list(v) for k, v in self.capacity_bands.items()},
            "wcss": self.wcss,
            "scale": self.scale,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ClusterModel":
        d = json.loads(text)
        return cls(
            k=d["k"],
            centroids=np.asarray(d["centroids"], dtype=float),
            assignments={str(k): int(v) for k, v in d["assignments"].items()},
            wcss_curve={int(k): float(v) for k, v in d["wcss_curve"].items()},
            capacity_bands={int(k): tuple(v) for k, v in d["capacity_bands"].items()},
            wcss=d.get("wcss", 0.0),
            scale=d.get("scale"),
        )


def summarize_owners(txns: Iterable[ChargingTransaction]) -> list[OwnerSummary]:
    """One summary per participant.

    ``active_days`` is the inclusive span between the first and last session
    date, which is also the denominator of ``charges_per_day``.
    """
    by_owner: dict[str, list[ChargingTransaction]] = defaultdict(list)
    for t in txns:
        by_owner[t.participant_id].append(t)
    out = []
    for pid in sorted(by_owner):
        rows = by_owner[pid]
        dates = [t.plug_in.date() for t in rows]
        span = (max(dates) - min(dates)).days + 1
        battery = max(t.car_kwh for t in rows)
        mean_kwh = sum(t.consumed_kwh for t in rows) / len(rows)
        out.append(OwnerSummary(pid, battery, mean_kwh, len(rows) / span, len(rows), span))
    return out


def minmax_normalize(points: np.ndarray) -> tuple[np.ndarray, tuple[list[float], list[float]]]:
    points = np.asarray(points, dtype=float)
    lo = points.min(axis=0)
    span = points.max(axis=0) - lo
    span[span == 0] = 1.0
    return (points - lo) / span, (lo.tolist(), span.tolist())


def _wcss(points: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    return float(((points - centroids[labels]) ** 2).sum())


def _sq_dist(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with a centre; take any unused index
            idx = next(i for i in range(n) if i not in chosen)
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return points[chosen].copy()


def kmeans(points: Sequence[Sequence[float]] | np.ndarray, k: int, seed: int = 0,
           n_init: int = 10) -> ClusterModel:
    """Lloyd's algorithm with k-means++ seeding.

    The best of ``n_init`` seeded restarts (lowest WCSS) is returned. Points
    are used as given; normalise beforehand if the features differ in scale.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise DataError("points must be a 2-d array")
    if k < 1:
        raise DataError("k must be >= 1")
    if k > len(pts):
        raise DataError(f"k={k} exceeds number of points {len(pts)}")

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        centroids = _plus_plus(pts, k, rng)
        labels = np.argmin(_sq_dist(pts, centroids), axis=1)
        it = 0
        for it in range(1, MAX_ITER + 1):
            for j in range(k):
                members = pts[labels == j]
                if len(members):
                    centroids[j] = members.mean(axis=0)
            new = np.argmin(_sq_dist(pts, centroids), axis=1)
            if np.array_equal(new, labels):
                break
            labels = new
        w = _wcss(pts, centroids, labels)
        if best is None or w < best[0]:
            best = (w, centroids.copy(), labels.copy(), it)
    w, centroids, labels, it = best
    return ClusterModel(k=k, centroids=centroids, assignments={}, labels=labels, wcss=w, n_iter=it)


def wcss_curve(points, k_max: int, seed: int = 0) -> dict[int, float]:
    pts = np.asarray(points, dtype=float)
    k_max = min(k_max, len(pts))
    return {k: kmeans(pts, k, seed).wcss for k in range(1, k_max + 1)}


def elbow_select(points, k_max: int = 8, seed: int = 0, threshold: float = ELBOW_THRESHOLD) -> int:
    """Smallest k whose next split adds less than ``threshold`` of the total WCSS.

    The marginal gain ``W(k) - W(k+1)`` is measured relative to ``W(1)``, the
    total sum of squares, so the rule reads "stop once another cluster explains
    less than 10% of the variability".
    """
    if k_max < 2:
        raise DataError("k_max must be >= 2")
    curve = wcss_curve(points, k_max, seed)
    total = curve[1]
    if total <= 1e-12:
        return 1
    ks = sorted(curve)
    for k in ks[:-1]:
        if (curve[k] - curve[k + 1]) / total < threshold:
            return k
    return ks[-1]


def assign_capacity_band(battery_kwh: float) -> int:
    """Map a battery capacity onto cluster 1, 2 or 3.

    Capacities between bands go to the band whose nearest edge is closest;
    equidistant values go to the lower band.
    """
    if battery_kwh <= 0:
        raise DataError("battery capacity must be positive")
    items = sorted(CAPACITY_BANDS.items())
    for idx, (lo, hi) in items:
        if battery_kwh <= hi:
            if battery_kwh >= lo or idx == items[0][0]:
                return idx
            prev_idx, (_, prev_hi) = items[idx - 2]
            # tolerance so decimal midpoints such as 20.35 count as ties
            return prev_idx if battery_kwh - prev_hi <= lo - battery_kwh + 1e-9 else idx
    return items[-1][0]


def cluster_owners(summaries: Sequence[OwnerSummary], k: int | None = None, k_max: int = 8,
                   seed: int = 0) -> ClusterModel:
    """Cluster owners on normalised (battery, kWh/charge) and relabel by capacity.

    Cluster labels are 1-based and ordered by mean battery capacity, so label 1
    is the small-battery group, matching the band numbering.
    """
    raw = np.array([[s.battery_kwh, s.mean_kwh_per_charge] for s in summaries], dtype=float)
    pts, scale = minmax_normalize(raw)
    curve = wcss_curve(pts, k_max, seed)
    if k is None:
        k = elbow_select(pts, k_max, seed)
    model = kmeans(pts, k, seed)
    order = np.argsort([raw[model.labels == j, 0].mean() for j in range(k)], kind="stable")
    relabel = np.empty(k, dtype=int)
    relabel[order] = np.arange(1, k + 1)
    labels = relabel[model.labels]
    model.centroids = model.centroids[order]
    model.labels = labels
    model.assignments = {s.participant_id: int(c) for s, c in zip(summaries, labels)}
    model.wcss_curve = curve
    model.scale = scale
    model.capacity_bands = {
        c: (float(raw[labels == c, 0].min()), float(raw[labels == c, 0].max())) for c in range(1, k + 1)
    }
    return model


def cluster_table(summaries: Sequence[OwnerSummary], assignments: dict[str, int]) -> list[dict]:
    """Per-cluster capacity range, mean kWh/charge and charging frequency."""
    groups: dict[int, list[OwnerSummary]] = defaultdict(list)
    for s in summaries:
        groups[assignments[s.participant_id]].append(s)
    rows = []
    for c in sorted(groups):
        g = groups[c]
        rows.append({
            "cluster": c,
            "min_capacity": min(s.battery_kwh for s in g),
            "max_capacity": max(s.battery_kwh for s in g),
            "mean_kwh_per_charge": float(np.mean([s.mean_kwh_per_charge for s in g])),
            "charges_per_day": float(np.mean([s.charges_per_day for s in g])),
            "owners": len(g),
        })
    return rows
