"""LSTM regression networks in numpy with hand-written backpropagation.

A network is one or two recurrent layers, each running forward in time and,
when bidirectional, also in reverse with its own weights. Hidden outputs of
every layer pass through (inverted) dropout during training. A linear head
reads the last forward state and, if present, the last reverse state (the
one that has seen the whole window).

Gate layout inside the fused ``4H`` pre-activation is ``[i, f, g, o]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

from ..errors import DataError, NumericError
from ..metrics import mape
from .tuning import TuningResult, random_search, time_slice_splits

BATCH = 7
MAX_EPOCHS = 100


@dataclass(frozen=True)
class LstmConfig:
    depth: int = 1
    bidirectional: bool = False
    units: int = 50
    learning_rate: float = 1e-3
    dropout: float = 0.0
    window: int = 7
    epochs: int = 100
    batch: int = BATCH
    seed: int = 0
    # raised only by tests that need to overfit on purpose
    max_epochs: int = MAX_EPOCHS

    def validate(self) -> "LstmConfig":
        if self.depth not in (1, 2):
            raise DataError("depth must be 1 (vanilla) or 2 (stacked)")
        if not 50 <= self.units <= 200:
            raise DataError("units must lie in [50, 200]")
        if not 1e-4 <= self.learning_rate <= 1e-2:
            raise DataError("learning_rate must lie in [1e-4, 1e-2]")
        if not 0 <= self.dropout <= 0.4:
            raise DataError("dropout must lie in [0, 0.4]")
        if self.window < 1 or self.batch < 1:
            raise DataError("window and batch must be positive")
        if not 1 <= self.epochs <= self.max_epochs:
            raise DataError(f"epochs must lie in [1, {self.max_epochs}]")
        return self


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _glorot(rng, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def _orthogonal(rng, rows, cols):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return np.ascontiguousarray(q if rows >= cols else q.T)


class LstmNetwork:
    """Parameters and forward/backward passes of a (stacked, bi-)LSTM regressor.

    Parameters live in ``params`` under names like ``l0.fwd.Wx``; the head
    is ``head.W`` / ``head.b``.
    """

    def __init__(self, input_dim: int, units: int, depth: int = 1, bidirectional: bool = False,
                 seed: int = 0, params: dict | None = None):
        self.input_dim, self.units, self.depth = int(input_dim), int(units), int(depth)
        self.bidirectional = bool(bidirectional)
        self.dirs = ("fwd", "bwd") if bidirectional else ("fwd",)
        self.params = params if params is not None else self._init(np.random.default_rng(seed))

    def _init(self, rng) -> dict[str, np.ndarray]:
        H = self.units
        p = {}
        d_in = self.input_dim
        for layer in range(self.depth):
            for d in self.dirs:
                b = np.zeros(4 * H)
                b[H:2 * H] = 1.0
                p[f"l{layer}.{d}.Wx"] = _glorot(rng, d_in, 4 * H)
                p[f"l{layer}.{d}.Wh"] = _orthogonal(rng, H, 4 * H)
                p[f"l{layer}.{d}.b"] = b
            d_in = H * len(self.dirs)
        p["head.W"] = _glorot(rng, d_in, 1)
        p["head.b"] = np.zeros(1)
        return p

    # -- single direction -------------------------------------------------

    def _run(self, x, prefix, reverse):
        Wx, Wh, b = (self.params[f"{prefix}.{k}"] for k in ("Wx", "Wh", "b"))
        B, T, _ = x.shape
        H = self.units
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        hs = np.empty((B, T, H))
        steps = []
        xw = x @ Wx + b
        for t in (range(T - 1, -1, -1) if reverse else range(T)):
            z = xw[:, t] + h @ Wh
            i = _sigmoid(z[:, :H])
            f = _sigmoid(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = _sigmoid(z[:, 3 * H:])
            c_prev, h_prev = c, h
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            hs[:, t] = h
            steps.append((t, h_prev, c_prev, i, f, g, o, tc))
        return hs, steps

    def _run_back(self, x, prefix, steps, dhs, grads):
        Wx, Wh = self.params[f"{prefix}.Wx"], self.params[f"{prefix}.Wh"]
        B, T, _ = x.shape
        H = self.units
        dz_all = np.zeros((B, T, 4 * H))
        dWh = np.zeros_like(Wh)
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t, h_prev, c_prev, i, f, g, o, tc in reversed(steps):
            dh = dhs[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = np.concatenate([dc * g * i * (1.0 - i), dc * c_prev * f * (1.0 - f),
                                 dc * i * (1.0 - g * g), do * o * (1.0 - o)], axis=1)
            dz_all[:, t] = dz
            dWh += h_prev.T @ dz
            dh_next = dz @ Wh.T
            dc_next = dc * f
        flat = dz_all.reshape(B * T, 4 * H)
        grads[f"{prefix}.Wx"] = x.reshape(B * T, -1).T @ flat
        grads[f"{prefix}.Wh"] = dWh
        grads[f"{prefix}.b"] = flat.sum(axis=0)
        return dz_all @ Wx.T

    # -- whole network ----------------------------------------------------

    def forward(self, X, train: bool = False, dropout: float = 0.0, rng=None):
        """Predictions for windows ``X`` of shape (batch, window, input_dim)."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 3 or X.shape[2] != self.input_dim:
            raise DataError(f"expected (batch, window, {self.input_dim}) input, got {X.shape}")
        cache = {"layers": []}
        inp = X
        for layer in range(self.depth):
            outs, runs = [], []
            for d in self.dirs:
                hs, steps = self._run(inp, f"l{layer}.{d}", reverse=(d == "bwd"))
                outs.append(hs)
                runs.append(steps)
            out = raw = np.concatenate(outs, axis=2)
            mask = None
            if train and dropout > 0:
                keep = 1.0 - dropout
                mask = (rng.random(out.shape) < keep) / keep
                out = out * mask
            cache["layers"].append((inp, runs, mask, raw))
            inp = out
        H = self.units
        feat = inp[:, -1, :H]
        if self.bidirectional:
            feat = np.concatenate([feat, inp[:, 0, H:]], axis=1)
        cache["feat"], cache["top"] = feat, inp.shape
        y = feat @ self.params["head.W"][:, 0] + self.params["head.b"][0]
        return y, cache

    def backward(self, cache, dy) -> dict[str, np.ndarray]:
        """Gradients of sum(dy * y) with respect to every parameter."""
        grads = {}
        feat = cache["feat"]
        grads["head.W"] = (feat.T @ dy)[:, None]
        grads["head.b"] = np.array([dy.sum()])
        dfeat = np.outer(dy, self.params["head.W"][:, 0])
        H = self.units
        dout = np.zeros(cache["top"])
        dout[:, -1, :H] = dfeat[:, :H]
        if self.bidirectional:
            dout[:, 0, H:] = dfeat[:, H:]
        for layer in range(self.depth - 1, -1, -1):
            inp, runs, mask, _ = cache["layers"][layer]
            if mask is not None:
                dout = dout * mask
            dinp = np.zeros_like(inp)
            for k, d in enumerate(self.dirs):
                dinp += self._run_back(inp, f"l{layer}.{d}", runs[k], dout[:, :, k * H:(k + 1) * H], grads)
            dout = dinp
        return grads

    def predict(self, X) -> np.ndarray:
        return self.forward(X)[0]

    def loss_and_grads(self, X, y, dropout: float = 0.0, rng=None):
        pred, cache = self.forward(X, train=dropout > 0, dropout=dropout, rng=rng)
        err = pred - np.asarray(y, dtype=float)
        loss = float(np.mean(err ** 2))
        return loss, self.backward(cache, 2.0 * err / len(err))

    def hidden_states(self, X) -> list[np.ndarray]:
        """Per-layer hidden sequences (batch, window, units * directions)."""
        _, cache = self.forward(X)
        return [layer[3] for layer in cache["layers"]]

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "units": self.units, "depth": self.depth,
                "bidirectional": self.bidirectional,
                "tensors": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                            for k, v in self.params.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "LstmNetwork":
        params = {k: np.asarray(t["data"], dtype=float).reshape(t["shape"]) for k, t in d["tensors"].items()}
        return cls(d["input_dim"], d["units"], d["depth"], d["bidirectional"], params=params)


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k in sorted(params):
            g = grads[k]
            m = self.m.get(k, 0.0) * b1 + (1 - b1) * g
            v = self.v.get(k, 0.0) * b2 + (1 - b2) * g * g
            self.m[k], self.v[k] = m, v
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_windows(X: np.ndarray, idx, window: int) -> np.ndarray:
    """Stack the ``window`` feature rows ending at each index (edge-padded at 0)."""
    X = np.asarray(X, dtype=float)
    idx = np.asarray(idx, dtype=int)
    rows = idx[:, None] + np.arange(1 - window, 1)[None, :]
    return X[np.clip(rows, 0, len(X) - 1)]


def _y_scaler(y) -> tuple[float, float]:
    lo, hi = float(np.min(y)), float(np.max(y))
    return lo, (hi - lo if hi > lo else 1.0)


@dataclass
class LstmModel:
    config: LstmConfig
    network: LstmNetwork
    y_lo: float
    y_span: float
    history: np.ndarray
    loss_curve: list[float] = field(default_factory=list)

    def predict(self, X_future) -> np.ndarray:
        """Forecast rows that directly follow the training rows."""
        X_future = np.asarray(X_future, dtype=float)
        if len(X_future) == 0:
            return np.zeros(0)
        full = np.vstack([self.history, X_future])
        idx = np.arange(len(self.history), len(full))
        return self.predict_at(full, idx)

    def predict_at(self, X, idx) -> np.ndarray:
        z = self.network.predict(make_windows(X, idx, self.config.window))
        return z * self.y_span + self.y_lo

    def to_dict(self) -> dict:
        return {"config": asdict(self.config), "network": self.network.to_dict(), "y_lo": self.y_lo,
                "y_span": self.y_span, "history": self.history.tolist(), "loss_curve": self.loss_curve}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "LstmModel":
        cfg = LstmConfig(**d["config"])
        hist = np.asarray(d["history"], dtype=float).reshape(-1, d["network"]["input_dim"])
        return cls(cfg, LstmNetwork.from_dict(d["network"]), d["y_lo"], d["y_span"], hist, d["loss_curve"])


def fit_lstm(X, y, config: LstmConfig | None = None) -> LstmModel:
    """Train on every window ending at index ``window-1`` onwards.

    The target is min-max scaled on the training rows; an epoch visits the
    windows in a seeded random order in batches of ``config.batch``.
    """
    cfg = (config or LstmConfig()).validate()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise DataError("X must be 2-d with one row per target")
    if len(y) <= cfg.window:
        raise DataError(f"need more than window={cfg.window} rows, got {len(y)}")
    lo, span = _y_scaler(y)
    z = (y - lo) / span
    idx = np.arange(cfg.window - 1, len(y))
    W = make_windows(X, idx, cfg.window)
    zt = z[idx]
    net = LstmNetwork(X.shape[1], cfg.units, cfg.depth, cfg.bidirectional, seed=cfg.seed)
    opt = Adam(cfg.learning_rate)
    rng = np.random.default_rng([cfg.seed, 1])
    curve = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(idx))
        total = 0.0
        for s in range(0, len(perm), cfg.batch):
            b = perm[s:s + cfg.batch]
            loss, grads = net.loss_and_grads(W[b], zt[b], cfg.dropout, rng)
            opt.step(net.params, grads)
            total += loss * len(b)
        if not np.isfinite(total):
            raise NumericError("LSTM training diverged")
        curve.append(total / len(perm))
    hist = X[len(X) - (cfg.window - 1):] if cfg.window > 1 else X[:0]
    return LstmModel(cfg, net, lo, span, hist, curve)


def grad_check(network: LstmNetwork, X, y, step: float = 1e-5, samples: int = 10, seed: int = 0,
               floor: float = 1e-6) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    ``samples`` entries are checked per tensor (all of them if the tensor is
    smaller). Relative error is ``|a - n| / max(|a|, |n|, floor)``; the floor
    keeps near-zero gradients from turning round-off into large ratios.
    """
    _, grads = network.loss_and_grads(X, y)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in sorted(network.params):
        p = network.params[name]
        picks = np.arange(p.size) if p.size <= samples else rng.choice(p.size, samples, replace=False)
        for j in picks:
            pos = np.unravel_index(j, p.shape)
            old = p[pos]
            p[pos] = old + step
            up = network.loss_and_grads(X, y)[0]
            p[pos] = old - step
            down = network.loss_and_grads(X, y)[0]
            p[pos] = old
            num = (up - down) / (2 * step)
            ana = grads[name][pos]
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), floor))
    return worst


# Each entry is either a tuple of choices or ("loguniform", lo, hi).
LSTM_SPACE: dict[str, Any] = {
    "depth": (1, 2),
    "bidirectional": (False, True),
    "units": (50, 100, 150, 200),
    "learning_rate": ("loguniform", 1e-4, 1e-2),
    "dropout": (0.0, 0.1, 0.2, 0.3, 0.4),
}


def _is_loguniform(v) -> bool:
    return isinstance(v, tuple) and len(v) == 3 and v[0] == "loguniform"


def sample_lstm_configs(space: Mapping[str, Any], budget: int, seed: int) -> list[dict]:
    if budget < 1:
        raise DataError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(budget):
        params = {}
        for k in sorted(space):
            v = space[k]
            if _is_loguniform(v):
                lo, hi = v[1], v[2]
                params[k] = float(lo) if lo == hi else float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
            else:
                params[k] = v[int(rng.integers(len(v)))]
                if isinstance(params[k], np.generic):
                    params[k] = params[k].item()
        out.append(params)
    return out


def tune_lstm(X, y, space: Mapping[str, Any] | None = None, budget: int = 10, seed: int = 0,
              base: LstmConfig | None = None, val_len: int = 7, initial: int | None = None,
              max_splits: int | None = None, threads: int = 1) -> TuningResult:
    """Seeded random search over LSTM settings scored by time-slice validation MAPE.

    Fields not in ``space`` come from ``base``. If every sampled trial is the
    same configuration it is returned without any training.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    base = base or LstmConfig()
    space = LSTM_SPACE if space is None else space
    candidates = sample_lstm_configs(space, budget, seed)
    configs = [replace(base, **p, seed=seed).validate() for p in candidates]
    if len({tuple(sorted(p.items())) for p in candidates}) == 1:
        return TuningResult(configs[0], float("nan"), [(i, p, float("nan")) for i, p in enumerate(candidates)])
    splits = time_slice_splits(len(y), val_len, initial, max_splits=max_splits)

    def score(params):
        cfg = replace(base, **params, seed=seed)
        errs = []
        for tr, va in splits:
            tr, va = np.asarray(tr), np.asarray(va)
            model = fit_lstm(X[tr], y[tr], cfg)
            errs.append(mape(y[va], model.predict_at(X, va)))
        return float(np.mean(errs))

    best, scores = random_search(candidates, score, threads)
    trace = [(i, p, s) for i, (p, s) in enumerate(zip(candidates, scores))]
    return TuningResult(configs[best], scores[best], trace)
