"""Array-backed decision trees and their growers.

Two growers share one node layout: a Gini classification tree for the
forest, and a second-order regression tree on logistic-loss gradients for
boosting. Samples with ``x[feature] <= threshold`` go left.
"""
from typing import List, Optional, Tuple

import numpy as np

from wildxai.models.predictor import TreeArrays

LEAF = -1


class Tree:
    """A fitted tree stored as parallel node arrays."""

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @classmethod
    def leaf(cls, value: float) -> "Tree":
        return cls([LEAF], [0.0], [LEAF], [LEAF], [value])

    @classmethod
    def stump(cls, feature: int, threshold: float, left_value: float, right_value: float) -> "Tree":
        return cls([feature, LEAF, LEAF], [threshold, 0.0, 0.0], [1, LEAF, LEAF], [2, LEAF, LEAF],
                   [0.5 * (left_value + right_value), left_value, right_value])

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] != LEAF
        while active.any():
            rows = np.flatnonzero(active)
            at = node[rows]
            go_left = X[rows, self.feature[at]] <= self.threshold[at]
            node[rows] = np.where(go_left, self.left[at], self.right[at])
            active[rows] = self.feature[node[rows]] != LEAF
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_arrays(self) -> TreeArrays:
        return TreeArrays(
            feature=self.feature.tolist(),
            threshold=self.threshold.tolist(),
            left=self.left.tolist(),
            right=self.right.tolist(),
            value=self.value.tolist(),
        )

    @classmethod
    def from_arrays(cls, arrays: TreeArrays) -> "Tree":
        return cls(arrays.feature, arrays.threshold, arrays.left, arrays.right, arrays.value)


class _Builder:
    def __init__(self):
        self.feature: List[int] = []
        self.threshold: List[float] = []
        self.left: List[int] = []
        self.right: List[int] = []
        self.value: List[float] = []

    def add(self, value: float) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(float(value))
        return len(self.feature) - 1

    def split(self, node: int, feature: int, threshold: float, left_value: float, right_value: float):
        self.feature[node] = int(feature)
        self.threshold[node] = float(threshold)
        self.left[node] = self.add(left_value)
        self.right[node] = self.add(right_value)
        return self.left[node], self.right[node]

    def build(self) -> Tree:
        return Tree(self.feature, self.threshold, self.left, self.right, self.value)


def _midpoint(lo: float, hi: float) -> float:
    mid = (lo + hi) / 2.0
    # rounding can land the midpoint on ``hi``; fall back so hi still goes right
    return lo if mid >= hi else mid


def _best_gini_split(X: np.ndarray, y: np.ndarray, candidates: np.ndarray, max_features: int) -> Optional[Tuple[int, float]]:
    n = len(y)
    total_pos = float(y.sum())
    left_n = np.arange(1, n, dtype=np.float64)
    right_n = n - left_n
    best_score, best = np.inf, None
    for visited, f in enumerate(candidates):
        if visited >= max_features and best is not None:
            break
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        boundary = xs[1:] > xs[:-1]
        if not boundary.any():
            continue
        left_pos = np.cumsum(y[order], dtype=np.float64)[:-1]
        right_pos = total_pos - left_pos
        gini_left = 1.0 - (left_pos / left_n) ** 2 - (1.0 - left_pos / left_n) ** 2
        gini_right = 1.0 - (right_pos / right_n) ** 2 - (1.0 - right_pos / right_n) ** 2
        score = np.where(boundary, (left_n * gini_left + right_n * gini_right) / n, np.inf)
        j = int(np.argmin(score))
        if score[j] < best_score:
            best_score, best = score[j], (int(f), _midpoint(xs[j], xs[j + 1]))
    return best


def grow_classification_tree(
    X: np.ndarray,
    y: np.ndarray,
    rng: np.random.Generator,
    max_features: int,
    min_split: int = 2,
    max_depth: Optional[int] = None,
) -> Tree:
    """
    Grow a Gini tree; leaf value is the fraction of positive labels.

    Args:
        X: (n, d) training matrix
        y: 0/1 labels
        rng: Stream used to draw candidate features at every node
        max_features: Candidate features per split (more are visited only
            while no valid split has been found)
        min_split: Nodes with fewer samples become leaves
        max_depth: Optional depth cap (root has depth 0)
    """
    builder = _Builder()
    root = builder.add(y.mean())
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, rows, depth = stack.pop()
        yn = y[rows]
        pos = int(yn.sum())
        if len(rows) < min_split or pos in (0, len(rows)) or (max_depth is not None and depth >= max_depth):
            continue
        candidates = rng.permutation(X.shape[1])
        split = _best_gini_split(X[rows], yn, candidates, max_features)
        if split is None:
            continue
        feature, threshold = split
        go_left = X[rows, feature] <= threshold
        left_rows, right_rows = rows[go_left], rows[~go_left]
        left, right = builder.split(node, feature, threshold, y[left_rows].mean(), y[right_rows].mean())
        stack.append((right, right_rows, depth + 1))
        stack.append((left, left_rows, depth + 1))
    return builder.build()


def _leaf_weight(G: float, H: float, reg_lambda: float) -> float:
    return -G / (H + reg_lambda)


def _best_gradient_split(
    X: np.ndarray, g: np.ndarray, h: np.ndarray, reg_lambda: float, min_child_weight: float
) -> Optional[Tuple[int, float, float]]:
    G, H = float(g.sum()), float(h.sum())
    parent = G * G / (H + reg_lambda)
    best_gain, best = 1e-12, None
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        boundary = xs[1:] > xs[:-1]
        if not boundary.any():
            continue
        GL = np.cumsum(g[order])[:-1]
        HL = np.cumsum(h[order])[:-1]
        GR, HR = G - GL, H - HL
        valid = boundary & (HL >= min_child_weight) & (HR >= min_child_weight)
        if not valid.any():
            continue
        gain = 0.5 * (GL**2 / (HL + reg_lambda) + GR**2 / (HR + reg_lambda) - parent)
        gain = np.where(valid, gain, -np.inf)
        j = int(np.argmax(gain))
        if gain[j] > best_gain:
            best_gain, best = float(gain[j]), (f, _midpoint(xs[j], xs[j + 1]), float(gain[j]))
    return best


def grow_gradient_tree(
    X: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    max_depth: int = 6,
    min_split: int = 2,
    reg_lambda: float = 1.0,
    min_child_weight: float = 1.0,
) -> Tree:
    """
    Grow a regression tree on first/second-order loss derivatives.

    Leaf weight is ``-G / (H + lambda)``; a split is kept only when its gain
    is positive.
    """
    builder = _Builder()
    root = builder.add(_leaf_weight(g.sum(), h.sum(), reg_lambda))
    stack = [(root, np.arange(len(g)), 0)]
    while stack:
        node, rows, depth = stack.pop()
        if len(rows) < min_split or depth >= max_depth:
            continue
        split = _best_gradient_split(X[rows], g[rows], h[rows], reg_lambda, min_child_weight)
        if split is None:
            continue
        feature, threshold, _ = split
        go_left = X[rows, feature] <= threshold
        left_rows, right_rows = rows[go_left], rows[~go_left]
        left, right = builder.split(
            node,
            feature,
            threshold,
            _leaf_weight(g[left_rows].sum(), h[left_rows].sum(), reg_lambda),
            _leaf_weight(g[right_rows].sum(), h[right_rows].sum(), reg_lambda),
        )
        stack.append((right, right_rows, depth + 1))
        stack.append((left, left_rows, depth + 1))
    return builder.build()
