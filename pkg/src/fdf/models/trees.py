"""CART regression trees, random forests and squared-loss gradient boosting."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import substream

LEAF = -1


@dataclass(frozen=True)
class TreeModel:
    """Flat node arrays; ``feature[k] == -1`` marks a leaf.

    Rows with ``x[feature] <= threshold`` go left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    n_features: int

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] != LEAF
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] != LEAF
        return self.value[node].copy()

    @property
    def n_leaves(self) -> int:
        return int((self.feature == LEAF).sum())

    def importances(self) -> np.ndarray:
        """Summed SSE reduction per feature."""
        imp = np.zeros(self.n_features)
        split = self.feature != LEAF
        np.add.at(imp, self.feature[split], self.gain[split])
        return imp


def _best_split(Xn, yn, features, min_leaf):
    """Best (gain, feature, threshold) over ``features`` in ascending order.

    Ties keep the lower feature index, then the lower threshold.
    """
    n = yn.size
    total = yn.sum()
    parent = total * total / n
    best = (0.0, LEAF, 0.0)
    if n < 2 * min_leaf:
        return best
    feats = np.asarray(list(features), dtype=np.int64)
    if feats.size == 0:
        return best
    cut = np.arange(min_leaf, n - min_leaf + 1)
    order = np.argsort(Xn[:, feats], axis=0, kind="stable")
    xs = np.take_along_axis(Xn[:, feats], order, axis=0)
    left_sum = np.cumsum(yn[order], axis=0)[cut - 1]
    valid = xs[cut - 1] < xs[cut]
    right_sum = total - left_sum
    score = left_sum ** 2 / cut[:, None] + right_sum ** 2 / (n - cut)[:, None]
    score = np.where(valid, score, -np.inf)
    ks = np.argmax(score, axis=0)
    gains = score[ks, np.arange(feats.size)] - parent
    floor = 1e-12 * max(abs(parent), 1.0)
    for col in range(feats.size):
        gain = gains[col]
        if gain > best[0] * (1 + 1e-12) and gain > floor:
            k = ks[col]
            thr = 0.5 * (xs[cut[k] - 1, col] + xs[cut[k], col])
            best = (float(gain), int(feats[col]), float(thr))
    return best


def fit_tree(X, y, max_depth: int | None = None, min_samples_leaf: int = 1,
             max_features: int | None = None, rng: np.random.Generator | None = None) -> TreeModel:
    """Greedy CART with squared error; leaves predict the training mean.

    With ``max_features`` set, each split considers a fresh uniform subset of
    that many columns drawn from ``rng``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n == 0:
        raise ValueError("cannot fit a tree on zero rows")
    if min_samples_leaf < 1:
        raise ValueError("min_samples_leaf must be >= 1")
    depth_cap = np.inf if max_depth is None else max_depth
    m = p if max_features is None else max_features
    if not 1 <= m <= max(p, 1):
        raise ValueError(f"max_features must be in 1..{p}")

    feature, threshold, left, right, value, gain = [], [], [], [], [], []

    def new_node(rows):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(y[rows].mean()))
        gain.append(0.0)
        return len(feature) - 1

    root_rows = np.arange(n)
    stack = [(new_node(root_rows), root_rows, 0)]
    while stack:
        node, rows, depth = stack.pop()
        if depth >= depth_cap or rows.size < 2 * min_samples_leaf or p == 0:
            continue
        if m < p:
            feats = np.sort(rng.choice(p, size=m, replace=False))
        else:
            feats = range(p)
        g, f, thr = _best_split(X[rows], y[rows], feats, min_samples_leaf)
        if f == LEAF:
            continue
        go_left = X[rows, f] <= thr
        lrows, rrows = rows[go_left], rows[~go_left]
        feature[node], threshold[node], gain[node] = f, thr, g
        left[node] = new_node(lrows)
        right[node] = new_node(rrows)
        # right pushed first so the left subtree gets the lower node ids
        stack.append((right[node], rrows, depth + 1))
        stack.append((left[node], lrows, depth + 1))

    return TreeModel(np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
                     np.array(right, dtype=np.int64), np.array(value), np.array(gain), p)


@dataclass(frozen=True)
class ForestModel:
    trees: tuple
    bootstrap: bool
    max_features: int
    seed: int

    def predict(self, X) -> np.ndarray:
        preds = np.stack([t.predict(X) for t in self.trees])
        return preds.mean(axis=0)

    def importances(self) -> np.ndarray:
        return np.mean([t.importances() for t in self.trees], axis=0)

    @property
    def n_leaves(self) -> int:
        return sum(t.n_leaves for t in self.trees)


def fit_forest(X, y, n_trees: int = 100, max_features: int | None = None, bootstrap: bool = True,
               seed: int = 42, max_depth: int | None = None, min_samples_leaf: int = 1) -> ForestModel:
    """Bagged CART trees; tree ``k`` draws from substream ``(seed, k)``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    m = p if max_features is None else int(max_features)
    trees = []
    for k in range(n_trees):
        rng = substream(seed, k)
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        trees.append(fit_tree(X[rows], y[rows], max_depth, min_samples_leaf, m, rng))
    return ForestModel(tuple(trees), bootstrap, m, seed)


@dataclass(frozen=True)
class GbmModel:
    init: float
    learning_rate: float
    trees: tuple
    seed: int = 0
    train_sse: tuple = field(default=(), compare=False)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.full(X.shape[0], self.init)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out

    def importances(self) -> np.ndarray:
        if not self.trees:
            return np.zeros(0)
        return np.sum([t.importances() for t in self.trees], axis=0)

    @property
    def n_leaves(self) -> int:
        return sum(t.n_leaves for t in self.trees)


def fit_gbm(X, y, n_rounds: int = 100, learning_rate: float = 0.1, max_depth: int = 3,
            seed: int = 0, min_samples_leaf: int = 1) -> GbmModel:
    """Stagewise boosting of depth-limited trees on squared-loss residuals.

    ``train_sse[m]`` is the training SSE after ``m`` rounds.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if n_rounds < 0:
        raise ValueError("n_rounds must be >= 0")
    if not 0 < learning_rate <= 1:
        raise ValueError("learning_rate must be in (0, 1]")
    init = float(y.mean())
    F = np.full(y.shape, init)
    sse = [float(((y - F) ** 2).sum())]
    trees = []
    for _ in range(n_rounds):
        tree = fit_tree(X, y - F, max_depth, min_samples_leaf)
        F = F + learning_rate * tree.predict(X)
        trees.append(tree)
        sse.append(float(((y - F) ** 2).sum()))
    return GbmModel(init, learning_rate, tuple(trees), seed, tuple(sse))
