"""Gradient-boosted regression trees used to rank MCTS rollout candidates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InsufficientData


@dataclass
class _Tree:
    # parallel arrays; leaves have feature == -1
    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def _new(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.value) - 1

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(len(x))
        for r, row in enumerate(x):
            node = 0
            while self.feature[node] >= 0:
                node = self.left[node] if row[self.feature[node]] <= self.threshold[node] else self.right[node]
            out[r] = self.value[node]
        return out


def _best_split(x: np.ndarray, y: np.ndarray, min_leaf: int):
    """Exact squared-error split search; returns (gain, feature, threshold) or None."""
    n = len(y)
    total = y.sum()
    base = total * total / n
    best = None
    for j in range(x.shape[1]):
        order = np.argsort(x[:, j], kind="stable")
        xs, ys = x[order, j], y[order]
        csum = np.cumsum(ys)[:-1]
        counts = np.arange(1, n)
        valid = (xs[1:] != xs[:-1]) & (counts >= min_leaf) & (n - counts >= min_leaf)
        if not valid.any():
            continue
        left = csum * csum / counts
        right = (total - csum) ** 2 / (n - counts)
        gain = np.where(valid, left + right - base, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > 1e-12 and (best is None or gain[k] > best[0]):
            best = (float(gain[k]), j, float((xs[k] + xs[k + 1]) / 2))
    return best


def _grow(tree: _Tree, x, y, depth: int, max_depth: int, min_leaf: int) -> int:
    node = tree._new(float(y.mean()))
    if depth >= max_depth or len(y) < 2 * min_leaf:
        return node
    split = _best_split(x, y, min_leaf)
    if split is None:
        return node
    _, j, thr = split
    mask = x[:, j] <= thr
    tree.feature[node] = j
    tree.threshold[node] = thr
    tree.left[node] = _grow(tree, x[mask], y[mask], depth + 1, max_depth, min_leaf)
    tree.right[node] = _grow(tree, x[~mask], y[~mask], depth + 1, max_depth, min_leaf)
    return node


@dataclass
class SurrogateModel:
    n_trees: int = 50
    max_depth: int = 3
    shrinkage: float = 0.1
    min_leaf: int = 1
    base: float = 0.0
    trees: list[_Tree] = field(default_factory=list)

    def fit(self, x: np.ndarray, y: np.ndarray) -> "SurrogateModel":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.base = float(y.mean())
        self.trees = []
        pred = np.full(len(y), self.base)
        for _ in range(self.n_trees):
            residual = y - pred
            tree = _Tree()
            _grow(tree, x, residual, 0, self.max_depth, self.min_leaf)
            self.trees.append(tree)
            pred += self.shrinkage * tree.predict(x)
        return self

    def predict_raw(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.full(len(x), self.base)
        for tree in self.trees:
            out += self.shrinkage * tree.predict(x)
        return out

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.clip(self.predict_raw(x), 0.0, 1.0)


def surrogate_fit(pairs, **kwargs) -> SurrogateModel:
    """Fit on (sequence, reward) pairs."""
    pairs = list(pairs)
    if len(pairs) < 2:
        raise InsufficientData(f"surrogate needs at least 2 observations, got {len(pairs)}")
    x = np.array([list(seq) for seq, _ in pairs], dtype=np.float64)
    y = np.array([r for _, r in pairs], dtype=np.float64)
    return SurrogateModel(**kwargs).fit(x, y)


def surrogate_predict(model: SurrogateModel, sequence) -> float:
    return float(model.predict(np.asarray([list(sequence)]))[0])
