"""Time-series regression and regression with ARIMA errors.

ARIMA orders for the regression errors are picked with the Hyndman-Khandakar
stepwise search: KPSS tests fix the differencing order, then (p, q) moves
through neighbouring models while AICc improves. Coefficients are fitted by
conditional sum of squares under a reparametrisation that keeps the AR part
stationary and the MA part invertible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_discrete_lyapunov
from scipy.optimize import minimize
from scipy.signal import lfilter

from .errors import DataError, NumericError

KPSS_CRITICAL_5PCT = 0.463
RIDGE_LAMBDA = 1e-8


# --------------------------------------------------------------------------- regression


@dataclass
class LinearModel:
    intercept: float
    coef: np.ndarray
    descriptor: tuple[str, ...] = ()
    ridge: bool = False

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.coef):
            raise DataError(f"design has {X.shape[-1]} columns, model expects {len(self.coef)}")
        return self.intercept + X @ self.coef

    def to_dict(self) -> dict:
        return {"intercept": self.intercept, "coef": self.coef.tolist(),
                "descriptor": list(self.descriptor), "ridge": self.ridge}


def fit_ts_regression(X, y, descriptor=(), ridge_fallback: bool = True,
                      rcond: float = 1e-10) -> LinearModel:
    """Least squares with an intercept, solved through a QR factorisation.

    Rank-deficient designs (e.g. a season that never occurs in the training
    window) raise unless ``ridge_fallback`` adds a tiny ridge penalty on the
    slopes.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if len(y) != n:
        raise DataError("X and y lengths differ")
    if n <= k:
        raise DataError(f"need more rows ({n}) than columns ({k})")
    A = np.column_stack([np.ones(n), X])
    Q, R = np.linalg.qr(A)
    diag = np.abs(np.diag(R))
    deficient = diag.min() <= rcond * max(diag.max(), 1.0)
    if not deficient:
        beta = np.linalg.solve(R, Q.T @ y)
        return LinearModel(float(beta[0]), beta[1:], tuple(descriptor))
    if not ridge_fallback:
        raise NumericError("design matrix is rank deficient")
    penalty = math.sqrt(RIDGE_LAMBDA) * np.eye(k + 1)[1:]
    Aug = np.vstack([A, penalty])
    yaug = np.concatenate([y, np.zeros(k)])
    Q, R = np.linalg.qr(Aug)
    beta = np.linalg.solve(R, Q.T @ yaug)
    return LinearModel(float(beta[0]), beta[1:], tuple(descriptor), ridge=True)


def forecast_linear(model: LinearModel, X_future) -> np.ndarray:
    return model.predict(X_future)


# --------------------------------------------------------------------------- unit roots


def kpss_statistic(x, lags: int | None = None) -> float:
    """Level-stationarity KPSS statistic with a Bartlett long-run variance."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if lags is None:
        lags = int(4 * (n / 100) ** 0.25)
    e = x - x.mean()
    s = np.cumsum(e)
    lrv = e @ e / n
    for lag in range(1, min(lags, n - 1) + 1):
        lrv += 2 * (1 - lag / (lags + 1)) * (e[lag:] @ e[:-lag]) / n
    if lrv <= 0:
        return 0.0
    return float(s @ s / n ** 2 / lrv)


def ndiffs(x, max_d: int = 2, critical: float = KPSS_CRITICAL_5PCT) -> int:
    """Difference until the KPSS test no longer rejects stationarity at 5%."""
    x = np.asarray(x, dtype=float)
    d = 0
    while d < max_d and len(x) > 3 and np.ptp(x) > 0 and kpss_statistic(x) > critical:
        x = np.diff(x)
        d += 1
    return d


# --------------------------------------------------------------------------- ARMA fitting


def _pacf_to_poly(r: np.ndarray) -> np.ndarray:
    """Durbin-Levinson map from partial autocorrelations to AR coefficients."""
    phi = np.zeros(0)
    for k, rk in enumerate(r):
        phi = np.concatenate([phi - rk * phi[::-1], [rk]]) if k else np.array([rk])
    return phi


def _poly_to_pacf(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float).copy()
    p = len(phi)
    r = np.zeros(p)
    for k in range(p - 1, -1, -1):
        rk = phi[k]
        r[k] = rk
        if k:
            phi = (phi[:k] + rk * phi[:k][::-1]) / (1 - rk ** 2)
    return r


def _unpack(u: np.ndarray, p: int, q: int):
    phi = _pacf_to_poly(np.tanh(u[:p])) if p else np.zeros(0)
    theta = -_pacf_to_poly(np.tanh(u[p:p + q])) if q else np.zeros(0)
    return phi, theta


def arma_residuals(z: np.ndarray, phi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Conditional innovations e_t for t >= p, pre-sample innovations set to 0."""
    p = len(phi)
    a = z[p:].copy()
    for i, ph in enumerate(phi, start=1):
        a -= ph * z[p - i: len(z) - i]
    if len(theta):
        a = lfilter([1.0], np.concatenate([[1.0], theta]), a)
    return a


@dataclass
class ArimaFit:
    order: tuple[int, int, int]
    phi: np.ndarray
    theta: np.ndarray
    mean: float
    include_mean: bool
    sigma2: float
    aicc: float
    n_used: int
    method: str = "css"
    converged: bool = True

    @property
    def n_params(self) -> int:
        return len(self.phi) + len(self.theta) + int(self.include_mean)

    def to_dict(self) -> dict:
        return {"order": list(self.order), "phi": self.phi.tolist(), "theta": self.theta.tolist(),
                "mean": self.mean, "include_mean": self.include_mean, "sigma2": self.sigma2,
                "aicc": self.aicc, "n_used": self.n_used, "method": self.method}

    @classmethod
    def from_dict(cls, d: dict) -> "ArimaFit":
        return cls(tuple(d["order"]), np.asarray(d["phi"], float), np.asarray(d["theta"], float),
                   d["mean"], d["include_mean"], d["sigma2"], d["aicc"], d["n_used"], d.get("method", "css"))


def _aicc(neg2ll: float, k: int, n: int) -> float:
    k = k + 1  # innovation variance
    if n - k - 1 <= 0:
        return math.inf
    return neg2ll + 2 * k + 2 * k * (k + 1) / (n - k - 1)


def _css_neg2ll(sse: float, n_used: int, n: int, scale: float) -> float:
    # Scaled to the full length so fits conditioned on different p compare fairly.
    sigma2 = max(sse / n_used, 1e-300 + 1e-24 * scale)
    return n * (math.log(2 * math.pi * sigma2) + 1)


def hannan_rissanen(w: np.ndarray, p: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Two-stage regression estimates used as optimiser starting values."""
    z = w - w.mean()
    n = len(z)
    if p == 0 and q == 0:
        return np.zeros(0), np.zeros(0)
    m = min(max(p, q) + 5, n // 4)
    lagged = np.column_stack([z[m - i: n - i] for i in range(1, m + 1)])
    ar_long, *_ = np.linalg.lstsq(lagged, z[m:], rcond=None)
    e = np.zeros(n)
    e[m:] = z[m:] - lagged @ ar_long
    start = m + max(p, q)
    cols = [z[start - i: n - i] for i in range(1, p + 1)] + [e[start - j: n - j] for j in range(1, q + 1)]
    coef, *_ = np.linalg.lstsq(np.column_stack(cols), z[start:], rcond=None)
    return coef[:p], coef[p:]


def _to_unconstrained(phi: np.ndarray, theta: np.ndarray) -> np.ndarray | None:
    parts = []
    for poly in (phi, -theta):
        if len(poly):
            roots = np.roots(np.concatenate([[1.0], -poly])[::-1])
            if np.any(np.abs(roots) <= 1.0 + 1e-3):
                return None
            parts.append(np.arctanh(np.clip(_poly_to_pacf(poly), -0.99, 0.99)))
    return np.concatenate(parts) if parts else np.zeros(0)


def fit_arma_css(w, p: int, q: int, include_mean: bool) -> ArimaFit:
    """Fit ARMA(p, q) to ``w`` by conditional sum of squares.

    Nelder-Mead runs from two starts, the Hannan-Rissanen estimate (when it
    is stationary and invertible) and the zero model; the lower CSS wins.
    """
    w = np.asarray(w, dtype=float)
    n = len(w)
    n_used = n - p
    dim = p + q + int(include_mean)
    if n_used <= dim + 2:
        raise NumericError(f"series too short for ARMA({p},{q})")
    scale = float(np.var(w)) or 1.0
    sd = math.sqrt(scale)
    center = float(w.mean())

    def objective(u):
        phi, theta = _unpack(u, p, q)
        mu = center + u[-1] * sd if include_mean else 0.0
        e = arma_residuals(w - mu, phi, theta)
        val = float(e @ e) / scale
        return val if np.isfinite(val) else 1e300

    if dim == 0:
        e = arma_residuals(w, np.zeros(0), np.zeros(0))
        sse = float(e @ e)
        return ArimaFit((0, 0, 0), np.zeros(0), np.zeros(0), 0.0, False, sse / n_used,
                        _aicc(_css_neg2ll(sse, n_used, n, scale), 0, n), n_used)

    inits = []
    hr = _to_unconstrained(*hannan_rissanen(w, p, q))
    if hr is not None:
        inits.append(np.concatenate([hr, [0.0] if include_mean else []]))
    inits.append(np.zeros(dim))
    best = None
    for x0 in inits:
        res = minimize(objective, x0, method="Nelder-Mead",
                       options={"maxiter": 250 * dim, "xatol": 1e-7, "fatol": 1e-10, "adaptive": dim > 3})
        if res.fun < 1e300 and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise NumericError(f"CSS optimisation failed for ARMA({p},{q})")
    phi, theta = _unpack(best.x, p, q)
    mu = center + best.x[-1] * sd if include_mean else 0.0
    sse = best.fun * scale
    return ArimaFit((p, 0, q), phi, theta, mu, include_mean, sse / n_used,
                    _aicc(_css_neg2ll(sse, n_used, n, scale), dim, n), n_used,
                    converged=bool(best.success))


def arma_exact_neg2ll(z: np.ndarray, phi: np.ndarray, theta: np.ndarray) -> tuple[float, float]:
    """Exact Gaussian -2 log-likelihood (sigma^2 concentrated out) by Kalman filter."""
    p, q = len(phi), len(theta)
    r = max(p, q + 1)
    T = np.zeros((r, r))
    T[:p, 0] = phi
    T[:-1, 1:] = np.eye(r - 1)
    R = np.zeros(r)
    R[0] = 1.0
    R[1:q + 1] = theta
    P = solve_discrete_lyapunov(T, np.outer(R, R))
    a = np.zeros(r)
    n = len(z)
    ssq = 0.0
    logdet = 0.0
    RR = np.outer(R, R)
    for t in range(n):
        F = P[0, 0]
        if F <= 0:
            return math.inf, math.nan
        v = z[t] - a[0]
        ssq += v * v / F
        logdet += math.log(F)
        K = P[:, 0] / F
        a = T @ (a + K * v)
        P = T @ (P - np.outer(K, P[0, :])) @ T.T + RR
    sigma2 = ssq / n
    return n * (math.log(2 * math.pi * max(sigma2, 1e-300)) + 1) + logdet, sigma2


def refine_ml(w, fit: ArimaFit) -> ArimaFit:
    """Polish a CSS fit by maximising the exact Gaussian likelihood."""
    w = np.asarray(w, dtype=float)
    p, _, q = fit.order
    dim = p + q + int(fit.include_mean)
    if dim == 0:
        return fit
    sd = math.sqrt(float(np.var(w)) or 1.0)
    x0 = np.concatenate([np.arctanh(np.clip(_poly_to_pacf(fit.phi), -0.999, 0.999)),
                         np.arctanh(np.clip(_poly_to_pacf(-fit.theta), -0.999, 0.999)),
                         [(fit.mean - w.mean()) / sd] if fit.include_mean else []])

    def objective(u):
        phi, theta = _unpack(u, p, q)
        mu = w.mean() + u[-1] * sd if fit.include_mean else 0.0
        val, _ = arma_exact_neg2ll(w - mu, phi, theta)
        return val if np.isfinite(val) else 1e300

    res = minimize(objective, x0, method="Nelder-Mead",
                   options={"maxiter": 200 * dim, "xatol": 1e-6, "fatol": 1e-8})
    phi, theta = _unpack(res.x, p, q)
    mu = w.mean() + res.x[-1] * sd if fit.include_mean else 0.0
    _, sigma2 = arma_exact_neg2ll(w - mu, phi, theta)
    return ArimaFit(fit.order, phi, theta, mu, fit.include_mean, sigma2,
                    _aicc(res.fun, dim, len(w)), len(w), method="css-ml", converged=bool(res.success))


# --------------------------------------------------------------------------- order search


@dataclass
class AutoArimaResult:
    fit: ArimaFit
    d: int
    path: list[tuple[tuple[int, int, bool], float]] = field(default_factory=list)
    tried: dict = field(default_factory=dict)

    @property
    def order(self) -> tuple[int, int, int]:
        p, _, q = self.fit.order
        return (p, self.d, q)


def _key(model, aicc):
    p, q, c = model
    return (aicc, p + q, p, int(c))


def auto_arima(residuals, max_p: int = 5, max_q: int = 5, max_d: int = 2,
               refine: bool = False) -> AutoArimaResult:
    """Stepwise ARIMA order selection on a residual series."""
    x = np.asarray(residuals, dtype=float)
    if len(x) < 30:
        raise DataError("auto_arima needs at least 30 observations")
    d = ndiffs(x, max_d)
    w = np.diff(x, n=d) if d else x
    scale = max(float(np.max(np.abs(x))), 1.0)
    if np.max(np.abs(w - (w.mean() if d <= 1 else 0.0))) <= 1e-12 * scale:
        mean = float(w.mean()) if d <= 1 else 0.0
        fit = ArimaFit((0, 0, 0), np.zeros(0), np.zeros(0), mean, d <= 1 and mean != 0.0,
                       0.0, -math.inf, len(w), method="degenerate")
        return AutoArimaResult(fit, d, [((0, 0, d <= 1), -math.inf)])

    allow_mean = d <= 1
    tried: dict[tuple[int, int, bool], ArimaFit | None] = {}
    errors: list[str] = []

    def evaluate(model):
        if model not in tried:
            p, q, c = model
            try:
                tried[model] = fit_arma_css(w, p, q, c)
            except NumericError as exc:
                errors.append(f"{model}: {exc}")
                tried[model] = None
        f = tried[model]
        return f.aicc if f is not None else math.inf

    starts = [(2, 2), (0, 0), (1, 0), (0, 1)]
    candidates = [(min(p, max_p), min(q, max_q), allow_mean) for p, q in starts]
    if allow_mean:
        candidates.append((0, 0, False))
    best = min(candidates, key=lambda m: _key(m, evaluate(m)))
    path = [(best, evaluate(best))]
    while True:
        p, q, c = best
        neighbours = []
        for dp, dq in ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1)):
            np_, nq = p + dp, q + dq
            if 0 <= np_ <= max_p and 0 <= nq <= max_q:
                neighbours.append((np_, nq, c))
        if allow_mean:
            neighbours.append((p, q, not c))
        challenger = min(neighbours, key=lambda m: _key(m, evaluate(m)))
        if _key(challenger, evaluate(challenger)) < _key(best, evaluate(best)):
            best = challenger
            path.append((best, evaluate(best)))
        else:
            break

    fit = tried[best]
    if fit is None:
        raise NumericError("no candidate ARIMA model converged: " + "; ".join(errors))
    fit = ArimaFit((fit.order[0], d, fit.order[2]), fit.phi, fit.theta, fit.mean, fit.include_mean,
                   fit.sigma2, fit.aicc, fit.n_used, fit.method, fit.converged)
    if refine:
        ml = refine_ml(w, fit)
        fit = ArimaFit((ml.order[0], d, ml.order[2]), ml.phi, ml.theta, ml.mean, ml.include_mean,
                       ml.sigma2, ml.aicc, ml.n_used, ml.method, ml.converged)
    return AutoArimaResult(fit, d, path, tried)


def arima_forecast(fit: ArimaFit, history, h: int) -> np.ndarray:
    """Iterated h-step forecast of an ARIMA process given its observed history."""
    x = np.asarray(history, dtype=float)
    d = fit.order[1]
    levels = []
    w = x
    for _ in range(d):
        levels.append(w[-1])
        w = np.diff(w)
    z = w - fit.mean
    p, q = len(fit.phi), len(fit.theta)
    e = np.zeros(len(z))
    if len(z) > p:
        e[p:] = arma_residuals(z, fit.phi, fit.theta)
    zs = list(z)
    es = list(e)
    out = []
    for _ in range(h):
        val = sum(fit.phi[i] * zs[-1 - i] for i in range(p) if len(zs) > i)
        val += sum(fit.theta[j] * es[-1 - j] for j in range(q) if len(es) > j)
        zs.append(val)
        es.append(0.0)
        out.append(val + fit.mean)
    f = np.array(out)
    for level in reversed(levels):
        f = level + np.cumsum(f)
    return f


# --------------------------------------------------------------------------- reg-ARIMA


@dataclass
class RegArimaModel:
    regression: LinearModel
    arima: ArimaFit
    residuals: np.ndarray

    @property
    def order(self) -> tuple[int, int, int]:
        return self.arima.order

    def to_dict(self) -> dict:
        return {"regression": self.regression.to_dict(), "arima": self.arima.to_dict()}


def fit_reg_arima(X, y, descriptor=(), max_p: int = 5, max_q: int = 5, max_d: int = 2,
                  refine: bool = False) -> RegArimaModel:
    """Regression first, then an automatically ordered ARIMA on its errors."""
    reg = fit_ts_regression(X, y, descriptor)
    resid = np.asarray(y, dtype=float) - reg.predict(X)
    auto = auto_arima(resid, max_p, max_q, max_d, refine)
    return RegArimaModel(reg, auto.fit, resid)


def forecast_reg_arima(model: RegArimaModel, X_future, residual_history=None) -> np.ndarray:
    """Regression forecast plus the iterated ARIMA forecast of its error."""
    base = model.regression.predict(X_future)
    hist = model.residuals if residual_history is None else np.asarray(residual_history, float)
    return base + arima_forecast(model.arima, hist, len(base))
