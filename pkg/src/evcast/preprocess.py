"""STL decomposition, gap imputation, outlier treatment and min-max scaling.

The STL here follows Cleveland et al. (1990): an inner loop of cycle-subseries
loess, a low-pass filter (three moving averages then loess) and trend loess,
with an optional single robustness pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DataError

PERIOD = 7
SEASONAL_WINDOW = 7
INNER_ITER = 2
OUTLIER_FENCE = 3.0


@dataclass
class StlDecomposition:
    trend: np.ndarray
    seasonal: np.ndarray
    remainder: np.ndarray
    period: int = PERIOD
    periodic_seasonal: bool = False
    weights: np.ndarray | None = None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"trend": self.trend, "seasonal": self.seasonal, "remainder": self.remainder})


def _next_odd(x: float) -> int:
    n = int(np.ceil(x))
    return n if n % 2 else n + 1


def loess(y: np.ndarray, x_eval: np.ndarray, q: int, degree: int = 1,
          rw: np.ndarray | None = None) -> np.ndarray:
    """Loess smoother of equally spaced data ``y`` at (integer) positions ``x_eval``.

    Uses the q nearest observations with tricube weights; when ``q`` exceeds
    the series length the bandwidth is widened by ``(q - n) / 2``.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    x_eval = np.asarray(x_eval, dtype=float)
    qe = min(q, n)
    left = np.clip(np.ceil(x_eval - (qe - 1) / 2.0), 0, n - qe).astype(int)
    idx = left[:, None] + np.arange(qe)[None, :]
    dist = np.abs(idx - x_eval[:, None])
    h = np.maximum(x_eval - left, left + qe - 1 - x_eval)
    if q > n:
        h = h + (q - n) // 2
    h = np.maximum(h, 1e-12)[:, None]
    r = dist / h
    w = np.where(r <= 0.001, 1.0, np.where(r <= 0.999, (1.0 - r ** 3) ** 3, 0.0))
    if rw is not None:
        w = w * rw[idx]
    wsum = w.sum(axis=1, keepdims=True)
    empty = wsum[:, 0] <= 0
    wsum[empty] = 1.0
    w = w / wsum
    if degree >= 1:
        a = (w * idx).sum(axis=1, keepdims=True)
        b = (w * (idx - a) ** 2).sum(axis=1, keepdims=True)
        ok = np.sqrt(b[:, 0]) > 0.001 * (n - 1)
        adj = 1.0 + (x_eval[:, None] - a) * (idx - a) / np.where(b > 0, b, 1.0)
        w = np.where(ok[:, None], w * adj, w)
    out = (w * y[idx]).sum(axis=1)
    out[empty] = 0.0
    return out


def _moving_average(x: np.ndarray, length: int) -> np.ndarray:
    c = np.cumsum(np.concatenate([[0.0], x]))
    return (c[length:] - c[:-length]) / length


def _inner(y, trend, period, ns, nt, nl, sdeg, rw):
    n = len(y)
    detrended = y - trend
    cycle = np.zeros(n + 2 * period)
    for k in range(period):
        sub = detrended[k::period]
        m = len(sub)
        sub_rw = rw[k::period] if rw is not None else None
        smooth = loess(sub, np.arange(-1, m + 1), ns, sdeg, sub_rw)
        cycle[k::period][: m + 2] = smooth
    low = _moving_average(_moving_average(_moving_average(cycle, period), period), 3)
    low = loess(low, np.arange(n), nl, 1)
    seasonal = cycle[period: period + n] - low
    trend = loess(y - seasonal, np.arange(n), nt, 1, rw)
    return seasonal, trend


def _robustness_weights(resid: np.ndarray) -> np.ndarray:
    h = 6.0 * np.median(np.abs(resid))
    if h <= 0:
        return np.ones_like(resid)
    u = np.abs(resid) / h
    return np.where(u < 1, (1 - u ** 2) ** 2, 0.0)


def stl(series, period: int = PERIOD, periodic: bool = False, seasonal_window: int = SEASONAL_WINDOW,
        inner_iter: int = INNER_ITER, robust: bool = False) -> StlDecomposition:
    """Additive seasonal-trend decomposition by loess.

    ``periodic=True`` forces a seasonal pattern that is identical in every
    cycle (the mean of each cycle position). ``robust=True`` adds one
    bisquare-reweighted pass so isolated spikes do not leak into the trend.
    """
    y = np.asarray(series, dtype=float)
    n = len(y)
    if n < 2 * period:
        raise DataError(f"series of length {n} too short for period {period}")
    if not np.all(np.isfinite(y)):
        raise DataError("stl requires a series without missing values")

    ns = 10 * n + 1 if periodic else seasonal_window
    nt = _next_odd(1.5 * period / (1 - 1.5 / ns))
    nl = _next_odd(period)

    rw = None
    passes = 2 if robust else 1
    for p in range(passes):
        # each pass restarts from a zero trend so the first pass cannot leak
        trend = np.zeros(n)
        for _ in range(inner_iter):
            seasonal, trend = _inner(y, trend, period, ns, nt, nl, 1, rw)
        if p + 1 < passes:
            rw = _robustness_weights(y - trend - seasonal)

    if periodic:
        pos = np.arange(n) % period
        means = np.array([seasonal[pos == k].mean() for k in range(period)])
        seasonal = means[pos]
    remainder = y - trend - seasonal
    return StlDecomposition(trend, seasonal, remainder, period, periodic, rw)


def impute_array(values, period: int = PERIOD, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Fill NaNs by seasonal adjustment, linear interpolation, re-seasonalising.

    The STL fit needs a complete series, so gaps are first bridged by plain
    interpolation; the three steps are then repeated with the bridge replaced
    by the latest imputation until the imputed values stop moving. Observed
    entries are copied through untouched.
    """
    y = np.asarray(values, dtype=float)
    missing = ~np.isfinite(y)
    if missing.all():
        raise DataError("cannot impute an all-missing series")
    if (~missing).sum() < 2:
        raise DataError("need at least two observed points")
    if not missing.any():
        return y.copy()
    t = np.arange(len(y))
    obs = ~missing
    filled = y.copy()
    filled[missing] = np.interp(t[missing], t[obs], y[obs])
    if len(y) < 2 * period:
        return filled
    for _ in range(max_iter):
        seasonal = stl(filled, period, periodic=True).seasonal
        adjusted = filled - seasonal
        interp = np.interp(t[missing], t[obs], adjusted[obs])
        new = interp + seasonal[missing]
        step = np.max(np.abs(new - filled[missing]))
        filled[missing] = new
        if step <= tol * max(1.0, np.max(np.abs(y[obs]))):
            break
    filled[obs] = y[obs]
    return filled


def impute_missing_days(series: pd.Series, period: int = PERIOD) -> pd.Series:
    """Reindex a date-indexed series to every calendar day and impute the gaps."""
    s = series.copy()
    s.index = pd.to_datetime(s.index)
    s = s.sort_index()
    full = s.reindex(pd.date_range(s.index[0], s.index[-1], freq="D"))
    return pd.Series(impute_array(full.to_numpy(), period), index=full.index, name=series.name)


def _fence(remainder: np.ndarray, scale: float) -> tuple[float, float]:
    q1, q3 = np.percentile(remainder, [25, 75])
    iqr = max(q3 - q1, 1e-8 * scale)
    return q1 - OUTLIER_FENCE * iqr, q3 + OUTLIER_FENCE * iqr


def _outlier_decomposition(y: np.ndarray, period: int) -> StlDecomposition:
    return stl(y, period, periodic=True, robust=True)


def detect_outliers(series, period: int = PERIOD, max_share: float = 0.05) -> list[int]:
    """Indices whose robust periodic-STL remainder lies outside the 3*IQR fence.

    Points are taken one at a time, most extreme first, and patched with
    trend + seasonal before re-checking; a spike otherwise drags the fitted
    trend and pushes its neighbours over the fence too.
    """
    y = np.asarray(series, dtype=float).copy()
    scale = float(np.max(np.abs(y))) or 1.0
    flagged: list[int] = []
    for _ in range(max(1, int(max_share * len(y)))):
        dec = _outlier_decomposition(y, period)
        lo, hi = _fence(dec.remainder, scale)
        out = (dec.remainder < lo) | (dec.remainder > hi)
        if not out.any():
            break
        dev = np.where(out, np.abs(dec.remainder - np.median(dec.remainder)), -np.inf)
        worst = int(np.argmax(dev))
        flagged.append(worst)
        y[worst] = dec.trend[worst] + dec.seasonal[worst]
    return sorted(flagged)


def replace_outliers(series, indices, period: int = PERIOD) -> np.ndarray:
    """Replace the flagged points by trend + seasonal; others are left as-is.

    The decomposition is fitted with the flagged points bridged by
    interpolation so the replacement values are not pulled by the outliers.
    """
    y = np.asarray(series, dtype=float).copy()
    idx = sorted(set(int(i) for i in indices))
    if not idx:
        return y
    bridged = y.copy()
    bridged[idx] = np.nan
    bridged = impute_array(bridged, period)
    dec = _outlier_decomposition(bridged, period)
    y[idx] = dec.trend[idx] + dec.seasonal[idx]
    return y


@dataclass(frozen=True)
class Scaler:
    lo: float
    span: float

    def apply(self, x):
        return (np.asarray(x, dtype=float) - self.lo) / self.span

    def invert(self, z):
        return np.asarray(z, dtype=float) * self.span + self.lo

    def to_dict(self) -> dict:
        return {"lo": self.lo, "span": self.span}


def minmax_fit(series) -> Scaler:
    x = np.asarray(series, dtype=float)
    lo, hi = float(np.min(x)), float(np.max(x))
    if not hi > lo:
        raise DataError("min-max scaling needs max > min")
    return Scaler(lo, hi - lo)


def minmax_apply(scaler: Scaler, x):
    return scaler.apply(x)


def minmax_invert(scaler: Scaler, z):
    return scaler.invert(z)
