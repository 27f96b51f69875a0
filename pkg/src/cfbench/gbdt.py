"""Gradient-boosted regression trees, squared loss, exact greedy splits.

Each round fits an axis-aligned binary tree to the current residuals by
exhaustive variance-reduction search over sorted feature values (threshold =
midpoint of the straddling pair, ties resolved to the lowest feature index
then lowest threshold), then shrinks it by the learning rate. No feature or
row subsampling, so fitting is fully deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ConfigError, ContractError, DataError, FitError


@dataclass
class Tree:
    """Flat node arrays; feature == -1 marks a leaf."""

    feature: np.ndarray  # int, -1 for leaves
    threshold: np.ndarray  # float, nan for leaves
    left: np.ndarray  # int child index, -1 for leaves
    right: np.ndarray
    value: np.ndarray  # float leaf value, nan for internal nodes

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(len(X))
        node_of = np.zeros(len(X), dtype=np.int64)
        active = np.arange(len(X))
        while len(active):
            nodes = node_of[active]
            leaf_mask = self.feature[nodes] == -1
            leaf_rows = active[leaf_mask]
            out[leaf_rows] = self.value[node_of[leaf_rows]]
            active = active[~leaf_mask]
            if not len(active):
                break
            nodes = node_of[active]
            go_left = X[active, self.feature[nodes]] < self.threshold[nodes]
            node_of[active] = np.where(go_left, self.left[nodes], self.right[nodes])
        return out

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] != -1:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
        return int(depths.max()) if self.n_nodes else 0


@dataclass
class GbdtModel:
    """base prediction + learning_rate * sum of tree outputs."""

    base: float
    learning_rate: float
    n_features: int
    max_depth: int
    trees: list[Tree] = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = _as_matrix(X, self.n_features)
        out = np.full(len(X), self.base)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out

    def staged_predict(self, X: np.ndarray) -> Iterator[np.ndarray]:
        """Predictions after 0, 1, ..., n_trees rounds (for loss curves)."""
        X = _as_matrix(X, self.n_features)
        out = np.full(len(X), self.base)
        yield out.copy()
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
            yield out.copy()


def _as_matrix(X, n_features: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DataError("feature matrix must be 2-D")
    if n_features is not None and X.shape[1] != n_features:
        raise ContractError(f"feature layout mismatch: model expects {n_features}, got {X.shape[1]}")
    return X


def _best_split(X: np.ndarray, y: np.ndarray, rows: np.ndarray, min_leaf: int):
    """Exhaustive SSE-minimizing split over all features; None if no valid cut."""
    n = len(rows)
    if n < 2 * min_leaf:
        return None
    y_node = y[rows]
    total_sum = float(y_node.sum())
    total_sq = float(np.dot(y_node, y_node))
    parent_sse = total_sq - total_sum * total_sum / n
    best = None
    for j in range(X.shape[1]):
        x = X[rows, j]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        ys = y_node[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        idx = np.arange(min_leaf - 1, n - min_leaf)
        if len(idx) == 0:
            continue
        valid = xs[idx] < xs[idx + 1]
        if not valid.any():
            continue
        idx = idx[valid]
        nl = idx + 1.0
        nr = n - nl
        sl = csum[idx]
        ql = csq[idx]
        sse = (ql - sl * sl / nl) + ((total_sq - ql) - (total_sum - sl) ** 2 / nr)
        k = int(np.argmin(sse))
        if best is None or sse[k] < best[0]:
            i = idx[k]
            best = (float(sse[k]), j, float((xs[i] + xs[i + 1]) / 2.0), order, i)
    if best is None:
        return None
    sse, feature, threshold, order, i = best
    if not sse < parent_sse - 1e-12 * (1.0 + abs(parent_sse)):
        return None
    left_rows = rows[order[: i + 1]]
    right_rows = rows[order[i + 1 :]]
    return feature, threshold, left_rows, right_rows


def _build_tree(X: np.ndarray, y: np.ndarray, max_depth: int, min_leaf: int) -> Tree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def add_node() -> int:
        feature.append(-1)
        threshold.append(math.nan)
        left.append(-1)
        right.append(-1)
        value.append(math.nan)
        return len(feature) - 1

    def grow(rows: np.ndarray, depth: int) -> int:
        node = add_node()
        split = _best_split(X, y, rows, min_leaf) if depth < max_depth else None
        if split is None:
            value[node] = float(np.mean(y[rows]))
            return node
        f, thr, left_rows, right_rows = split
        feature[node] = f
        threshold[node] = thr
        left[node] = grow(left_rows, depth + 1)
        right[node] = grow(right_rows, depth + 1)
        return node

    grow(np.arange(len(y)), 0)
    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=float),
    )


def fit_gbdt(
    X,
    y,
    n_trees: int = 100,
    max_depth: int = 3,
    learning_rate: float = 0.1,
    min_leaf: int = 20,
) -> GbdtModel:
    """Squared-loss boosting on (features, labels).

    Identical labels yield a base-prediction-only model with zero trees.
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    if len(X) != len(y) or len(y) == 0:
        raise FitError("features and labels must be non-empty and aligned")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise DataError("features and labels must be finite")
    if n_trees < 0 or max_depth < 1 or min_leaf < 1 or not 0.0 < learning_rate <= 1.0:
        raise ConfigError("invalid boosting hyperparameters")
    base = float(np.mean(y))
    model = GbdtModel(
        base=base, learning_rate=learning_rate, n_features=X.shape[1], max_depth=max_depth
    )
    if np.ptp(y) == 0.0:
        return model
    residual = y - base
    for _ in range(n_trees):
        tree = _build_tree(X, residual, max_depth, min_leaf)
        model.trees.append(tree)
        residual -= learning_rate * tree.predict(X)
    return model


FORMAT_HEADER = "cfbench-gbdt v1"


def save_gbdt(model: GbdtModel, path) -> None:
    """Versioned flat text, one line per node:
    tree_id node_id feature threshold left right value."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(FORMAT_HEADER + "\n")
        fh.write(
            f"n_features={model.n_features} max_depth={model.max_depth} "
            f"learning_rate={repr(model.learning_rate)} base={repr(model.base)} "
            f"n_trees={len(model.trees)}\n"
        )
        for ti, tree in enumerate(model.trees):
            for ni in range(tree.n_nodes):
                fh.write(
                    f"{ti} {ni} {tree.feature[ni]} {repr(float(tree.threshold[ni]))} "
                    f"{tree.left[ni]} {tree.right[ni]} {repr(float(tree.value[ni]))}\n"
                )


def load_gbdt(path) -> GbdtModel:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != FORMAT_HEADER:
            raise DataError(f"unsupported model file header {header!r}")
        meta = dict(item.split("=", 1) for item in fh.readline().split())
        model = GbdtModel(
            base=float(meta["base"]),
            learning_rate=float(meta["learning_rate"]),
            n_features=int(meta["n_features"]),
            max_depth=int(meta["max_depth"]),
        )
        n_trees = int(meta["n_trees"])
        rows: dict[int, list[tuple[int, int, float, int, int, float]]] = {
            t: [] for t in range(n_trees)
        }
        for line in fh:
            ti, ni, f, thr, lo, hi, val = line.split()
            rows[int(ti)].append((int(ni), int(f), float(thr), int(lo), int(hi), float(val)))
        for ti in range(n_trees):
            nodes = sorted(rows[ti])
            model.trees.append(
                Tree(
                    feature=np.asarray([r[1] for r in nodes], dtype=np.int64),
                    threshold=np.asarray([r[2] for r in nodes], dtype=float),
                    left=np.asarray([r[3] for r in nodes], dtype=np.int64),
                    right=np.asarray([r[4] for r in nodes], dtype=np.int64),
                    value=np.asarray([r[5] for r in nodes], dtype=float),
                )
            )
    return model
