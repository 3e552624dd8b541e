"""Forecast error metrics."""

import numpy as np

from .errors import DataError


def mape(actual, forecast) -> float:
    """Mean absolute percentage error, in percent."""
    a = np.asarray(actual, dtype=float)
    f = np.asarray(forecast, dtype=float)
    if a.shape != f.shape:
        raise DataError(f"length mismatch: {a.shape} vs {f.shape}")
    if a.size == 0:
        raise DataError("MAPE of an empty sample is undefined")
    if np.any(a == 0):
        raise DataError("MAPE undefined: actual series contains zeros")
    # scale each term before averaging so whole-percent errors stay exact
    return float(np.mean(100.0 * np.abs(a - f) / np.abs(a)))
