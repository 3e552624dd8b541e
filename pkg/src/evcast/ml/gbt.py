"""Second-order gradient boosting of regression trees (squared error).

Each round fits a tree to the gradient/hessian statistics of the current
predictions with exact greedy splits:

    gain = 1/2 [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)] - gamma
    leaf = -G / (H + lambda)

For squared error g = prediction - y and h = 1.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import DataError

MIN_ROWS = 20


@dataclass(frozen=True)
class GbtConfig:
    rounds: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    min_child_weight: float = 1.0
    lambda_l2: float = 1.0
    gamma_split: float = 0.0
    subsample: float = 1.0
    colsample: float = 1.0
    seed: int = 0

    def validate(self) -> "GbtConfig":
        if self.rounds < 1:
            raise DataError("rounds must be >= 1")
        if not self.learning_rate > 0:
            raise DataError("learning_rate must be positive")
        if self.max_depth < 0:
            raise DataError("max_depth must be >= 0")
        if self.min_child_weight < 0 or self.lambda_l2 < 0 or self.gamma_split < 0:
            raise DataError("min_child_weight, lambda_l2 and gamma_split must be non-negative")
        for name in ("subsample", "colsample"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise DataError(f"{name} must lie in (0, 1]")
        return self


@dataclass
class Node:
    value: float = 0.0
    feature: int = -1
    threshold: float = 0.0
    left: "Node | None" = None
    right: "Node | None" = None
    gain: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"leaf": self.value}
        return {"feature": self.feature, "threshold": self.threshold, "gain": self.gain,
                "left": self.left.to_dict(), "right": self.right.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Node":
        if "leaf" in d:
            return cls(value=d["leaf"])
        return cls(feature=d["feature"], threshold=d["threshold"], gain=d.get("gain", 0.0),
                   left=cls.from_dict(d["left"]), right=cls.from_dict(d["right"]))


def _leaf_weight(G: float, H: float, lam: float) -> float:
    return -G / (H + lam) if H + lam > 0 else 0.0


def _score(G, H, lam):
    denom = H + lam
    return np.divide(G * G, denom, out=np.zeros_like(np.asarray(G, dtype=float)), where=denom > 0)


def _best_split(X, g, h, order, rows, features, cfg):
    G, H = g[rows].sum(), h[rows].sum()
    parent = float(_score(np.array(G), np.array(H), cfg.lambda_l2))
    member = np.zeros(len(g), dtype=bool)
    member[rows] = True
    # presorted columns filtered to this node's rows: one row per feature
    ord_f = order[features]
    o = ord_f[member[ord_f]].reshape(len(features), len(rows))
    xs = X[o, features[:, None]]
    gl = np.cumsum(g[o], axis=1)[:, :-1]
    hl = np.cumsum(h[o], axis=1)[:, :-1]
    valid = (xs[:, 1:] > xs[:, :-1]) & (hl >= cfg.min_child_weight) & (H - hl >= cfg.min_child_weight)
    if not valid.any():
        return (0.0, -1, 0.0)
    gain = 0.5 * (_score(gl, hl, cfg.lambda_l2) + _score(G - gl, H - hl, cfg.lambda_l2) - parent) - cfg.gamma_split
    gain = np.where(valid, gain, -np.inf)
    # first maximum in (feature, position) order
    j, i = np.unravel_index(int(np.argmax(gain)), gain.shape)
    if not gain[j, i] > 1e-12:
        return (0.0, -1, 0.0)
    return (float(gain[j, i]), int(features[j]), 0.5 * (xs[j, i] + xs[j, i + 1]))


def _grow(X, g, h, order, rows, depth, features, cfg) -> Node:
    G, H = g[rows].sum(), h[rows].sum()
    node = Node(value=_leaf_weight(G, H, cfg.lambda_l2))
    if depth >= cfg.max_depth or len(rows) < 2:
        return node
    gain, f, thr = _best_split(X, g, h, order, rows, features, cfg)
    if f < 0:
        return node
    mask = X[rows, f] <= thr
    node.feature, node.threshold, node.gain = f, thr, gain
    node.left = _grow(X, g, h, order, rows[mask], depth + 1, features, cfg)
    node.right = _grow(X, g, h, order, rows[~mask], depth + 1, features, cfg)
    return node


def predict_tree(node: Node, X: np.ndarray) -> np.ndarray:
    out = np.empty(len(X))
    stack = [(node, np.arange(len(X)))]
    while stack:
        nd, idx = stack.pop()
        if nd.is_leaf:
            out[idx] = nd.value
            continue
        mask = X[idx, nd.feature] <= nd.threshold
        stack.append((nd.left, idx[mask]))
        stack.append((nd.right, idx[~mask]))
    return out


@dataclass
class GbtModel:
    config: GbtConfig
    base: float
    trees: list[Node] = field(default_factory=list)
    n_features: int = 0
    train_loss: list[float] = field(default_factory=list)

    def predict(self, X, rounds: int | None = None) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} feature columns")
        out = np.full(len(X), self.base)
        for tree in self.trees[:rounds]:
            out += self.config.learning_rate * predict_tree(tree, X)
        return out

    def to_dict(self) -> dict:
        return {"config": asdict(self.config), "base": self.base, "n_features": self.n_features,
                "trees": [t.to_dict() for t in self.trees]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "GbtModel":
        return cls(GbtConfig(**d["config"]), d["base"], [Node.from_dict(t) for t in d["trees"]],
                   d["n_features"])


def fit_gbt(X, y, config: GbtConfig | None = None) -> GbtModel:
    """Boost ``config.rounds`` trees from a constant (mean of y) start.

    Row and column sampling draw from a generator keyed on (seed, round) so
    results do not depend on the order rows are supplied in.
    """
    cfg = (config or GbtConfig()).validate()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise DataError("X must be 2-d with one row per target")
    if len(y) < MIN_ROWS:
        raise DataError(f"need at least {MIN_ROWS} training rows, got {len(y)}")
    n, k = X.shape
    base = float(y.mean())
    pred = np.full(n, base)
    model = GbtModel(cfg, base, n_features=k)
    h = np.ones(n)
    order = np.argsort(X, axis=0, kind="stable").T
    for r in range(cfg.rounds):
        rng = np.random.default_rng([cfg.seed, r])
        g = pred - y
        if cfg.subsample < 1:
            rows = np.flatnonzero(rng.random(n) < cfg.subsample)
            if len(rows) == 0:
                rows = np.arange(n)
        else:
            rows = np.arange(n)
        if cfg.colsample < 1:
            m = max(1, int(round(cfg.colsample * k)))
            features = np.sort(rng.choice(k, size=m, replace=False))
        else:
            features = np.arange(k)
        tree = _grow(X, g, h, order, rows, 0, features, cfg)
        model.trees.append(tree)
        pred = pred + cfg.learning_rate * predict_tree(tree, X)
        model.train_loss.append(float(np.mean((pred - y) ** 2)))
    return model
