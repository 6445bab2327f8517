"""CART regression trees, random forests and regularised gradient boosting."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _treekernels as K
from .errors import ValidationError

UNLIMITED_DEPTH = 2**31 - 1


def max_threads() -> int:
    """Worker cap from ``PVSHADE_THREADS``; unset means single-threaded."""
    raw = os.environ.get("PVSHADE_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValidationError(f"PVSHADE_THREADS must be an integer, got {raw!r}") from None


def as_matrix(X, n_features: Optional[int] = None) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError(f"expected a 2-D feature matrix, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise ValidationError(f"model was fitted on {n_features} features, got {X.shape[1]}")
    return X


def _targets(y, n) -> np.ndarray:
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.shape != (n,):
        raise ValidationError(f"targets must have shape ({n},), got {y.shape}")
    return y


def _presort(X) -> np.ndarray:
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class DecisionTree:
    """Flat node arena.  Node 0 is the root; leaves have ``feature == -1``.

    Every node (not only leaves) stores its fitted ``value``.  Rows with
    ``x[feature] <= threshold`` go left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    max_depth: Optional[int] = None
    min_samples_leaf: int = 1

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    @property
    def depth(self) -> int:
        depth = np.zeros(self.node_count, dtype=np.int64)
        for node in range(self.node_count):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        X = as_matrix(X)
        if self.node_count > 1 and X.shape[1] <= self.feature.max():
            raise ValidationError(f"tree splits on feature {self.feature.max()}, "
                                  f"but X has {X.shape[1]} columns")
        return K.apply_tree(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def with_values(self, value) -> "DecisionTree":
        return replace(self, value=np.asarray(value, dtype=float))

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
        }

    @classmethod
    def from_dict(cls, d) -> "DecisionTree":
        ints = lambda k: np.asarray(d[k], dtype=np.int64)
        return cls(ints("feature"), np.asarray(d["threshold"], dtype=float), ints("left"),
                   ints("right"), np.asarray(d["value"], dtype=float), ints("n_samples"),
                   d.get("max_depth"), int(d.get("min_samples_leaf", 1)))


def _grow(X, t, *, max_depth, min_samples_leaf, max_features, l2=0.0, gamma=0.0,
          cart=True, seed=0, order=None) -> DecisionTree:
    n, p = X.shape
    if n < 1:
        raise ValidationError("cannot fit a tree on zero rows")
    if min_samples_leaf < 1:
        raise ValidationError("min_samples_leaf must be >= 1")
    mf = p if max_features is None else int(max_features)
    if not 1 <= mf <= p:
        raise ValidationError(f"max_features must lie in [1, {p}], got {mf}")
    depth = UNLIMITED_DEPTH if max_depth is None else int(max_depth)
    if depth < 0:
        raise ValidationError("max_depth must be >= 0")
    order = _presort(X) if order is None else order
    arrays = K.grow_tree(X, t, order, depth, int(min_samples_leaf), mf, float(l2),
                         float(gamma), bool(cart), np.uint64(seed % 2**64))
    return DecisionTree(*arrays, max_depth=max_depth, min_samples_leaf=int(min_samples_leaf))


def fit_tree(features, targets, max_depth=None, min_samples_leaf=1, max_features=None,
             rng=0) -> DecisionTree:
    """Exact greedy CART regression tree.

    Each node looks at up to ``max_features`` randomly ordered features,
    skipping features that are constant on the node, and takes the split with
    the largest squared-error decrease.  Candidate thresholds are midpoints
    between consecutive distinct values.  Ties go to the lower feature index,
    then the lower threshold.  ``rng`` is an integer seed or a numpy
    ``Generator``; it only matters when ``max_features`` is below the feature
    count.
    """
    X = as_matrix(features)
    y = _targets(targets, X.shape[0])
    seed = int(rng.integers(0, 2**63)) if isinstance(rng, np.random.Generator) else int(rng)
    return _grow(X, y, max_depth=max_depth, min_samples_leaf=min_samples_leaf,
                 max_features=max_features, seed=seed)


def node_sums(tree: DecisionTree, X, targets) -> tuple[np.ndarray, np.ndarray]:
    """Target sum and row count of every node, by routing ``X`` from the root."""
    X = as_matrix(X)
    t = np.asarray(targets, dtype=float)
    sums = np.zeros(tree.node_count)
    counts = np.zeros(tree.node_count, dtype=np.int64)
    node = np.zeros(len(X), dtype=np.int64)
    rows = np.arange(len(X))
    while rows.size:
        np.add.at(sums, node, t[rows])
        np.add.at(counts, node, 1)
        f = tree.feature[node]
        internal = f >= 0
        rows, node, f = rows[internal], node[internal], f[internal]
        go_left = X[rows, f] <= tree.threshold[node]
        node = np.where(go_left, tree.left[node], tree.right[node])
    return sums, counts


def refit_values(tree: DecisionTree, X, targets, leaf_l2=0.0) -> DecisionTree:
    """Same structure, node values recomputed as sum/(count + leaf_l2)."""
    sums, counts = node_sums(tree, X, targets)
    return tree.with_values(sums / (counts + leaf_l2))


# --- random forest --------------------------------------------------------

def forest_tree_sample(seed: int, tree_index: int, n: int, bootstrap: bool = True):
    """Row indices and feature-sampling seed used for tree ``tree_index``.

    Each tree draws from its own PCG64 stream keyed by ``(seed, tree_index)``,
    so trees can be grown in any order.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tree_index,)))
    feature_seed = int(rng.integers(0, 2**63))
    idx = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
    return idx, feature_seed


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: list
    max_features: int
    bootstrap: bool
    seed: int
    max_depth: Optional[int] = None
    min_samples_leaf: int = 2
    feature_names: Optional[list] = None
    model_type: str = field(default="forest", init=False)

    @property
    def n_features(self) -> int:
        return len(self.feature_names) if self.feature_names else None

    def predict(self, X) -> np.ndarray:
        return predict_forest(self, X)

    def to_dict(self) -> dict:
        return {
            "model_type": "forest",
            "feature_names": self.feature_names,
            "n_trees": len(self.trees),
            "max_features": self.max_features,
            "bootstrap": self.bootstrap,
            "seed": self.seed,
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d) -> "ForestModel":
        return cls([DecisionTree.from_dict(t) for t in d["trees"]], d["max_features"],
                   d["bootstrap"], d["seed"], d.get("max_depth"), d["min_samples_leaf"],
                   d.get("feature_names"))


def fit_forest(features, targets, n_trees=100, max_depth=None, max_features=None, seed=0,
               *, min_samples_leaf=2, bootstrap=True, feature_names=None) -> ForestModel:
    """Bagged CART trees with per-node feature subsampling.

    ``max_features`` defaults to ceil(p / 3).
    """
    X = as_matrix(features)
    y = _targets(targets, X.shape[0])
    n, p = X.shape
    if n_trees < 1:
        raise ValidationError("n_trees must be >= 1")
    mf = max(1, -(-p // 3)) if max_features is None else int(max_features)

    def one(t):
        idx, fseed = forest_tree_sample(seed, t, n, bootstrap)
        Xb = np.ascontiguousarray(X[idx])
        return _grow(Xb, np.ascontiguousarray(y[idx]), max_depth=max_depth,
                     min_samples_leaf=min_samples_leaf, max_features=mf, seed=fseed)

    workers = min(max_threads(), n_trees)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            trees = list(pool.map(one, range(n_trees)))
    else:
        trees = [one(t) for t in range(n_trees)]
    return ForestModel(trees, mf, bool(bootstrap), int(seed), max_depth, int(min_samples_leaf),
                       list(feature_names) if feature_names is not None else None)


def predict_forest(model: ForestModel, features) -> np.ndarray:
    """Unweighted mean of the per-tree predictions, summed in tree order."""
    X = as_matrix(features, model.n_features)
    acc = np.zeros(X.shape[0])
    for tree in model.trees:
        acc += tree.predict(X)
    return acc / len(model.trees)


# --- gradient boosting ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class BoostModel:
    """Squared-error boosted trees; tree node values are the unshrunk weights -G/(H+l2)."""

    trees: list
    learning_rate: float
    leaf_l2: float
    split_gamma: float
    base_score: float
    max_depth: Optional[int] = 6
    min_samples_leaf: int = 1
    feature_names: Optional[list] = None
    model_type: str = field(default="boost", init=False)

    @property
    def rounds(self) -> int:
        return len(self.trees)

    @property
    def n_features(self) -> int:
        return len(self.feature_names) if self.feature_names else None

    def predict(self, X) -> np.ndarray:
        return predict_boost(self, X)

    def staged_predict(self, X):
        """Predictions after 0, 1, ..., rounds trees."""
        X = as_matrix(X, self.n_features)
        pred = np.full(X.shape[0], self.base_score)
        yield pred.copy()
        for tree in self.trees:
            pred += self.learning_rate * tree.predict(X)
            yield pred.copy()

    def to_dict(self) -> dict:
        return {
            "model_type": "boost",
            "feature_names": self.feature_names,
            "rounds": self.rounds,
            "learning_rate": self.learning_rate,
            "leaf_l2": self.leaf_l2,
            "split_gamma": self.split_gamma,
            "base_score": self.base_score,
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d) -> "BoostModel":
        return cls([DecisionTree.from_dict(t) for t in d["trees"]], d["learning_rate"],
                   d["leaf_l2"], d["split_gamma"], d["base_score"], d.get("max_depth"),
                   d.get("min_samples_leaf", 1), d.get("feature_names"))


def fit_boost(features, targets, rounds=200, learning_rate=0.1, max_depth=6, leaf_l2=1.0,
              split_gamma=0.0, *, min_samples_leaf=1, feature_names=None) -> BoostModel:
    """Gradient boosting on squared error (gradient = prediction - target, hessian = 1).

    Each round grows a tree on the current gradients.  A split is kept only
    when 0.5*[G_L^2/(H_L+l2) + G_R^2/(H_R+l2) - G^2/(H+l2)] - gamma > 0, and
    every node's weight is -G/(H+l2).  Starts from the target mean.
    """
    X = as_matrix(features)
    y = _targets(targets, X.shape[0])
    if rounds < 1:
        raise ValidationError("rounds must be >= 1")
    if not 0.0 < learning_rate <= 1.0:
        raise ValidationError("learning_rate must lie in (0, 1]")
    if leaf_l2 < 0 or split_gamma < 0:
        raise ValidationError("leaf_l2 and split_gamma must be >= 0")
    base = float(y.mean())
    pred = np.full(X.shape[0], base)
    order = _presort(X)
    trees = []
    for _ in range(rounds):
        residual = y - pred  # negative gradient
        tree = _grow(X, residual, max_depth=max_depth, min_samples_leaf=min_samples_leaf,
                     max_features=None, l2=leaf_l2, gamma=split_gamma, cart=False,
                     order=order.copy())
        trees.append(tree)
        pred += learning_rate * tree.predict(X)
    return BoostModel(trees, float(learning_rate), float(leaf_l2), float(split_gamma), base,
                      max_depth, int(min_samples_leaf),
                      list(feature_names) if feature_names is not None else None)


def predict_boost(model: BoostModel, features) -> np.ndarray:
    X = as_matrix(features, model.n_features)
    pred = np.full(X.shape[0], model.base_score)
    for tree in model.trees:
        pred += model.learning_rate * tree.predict(X)
    return pred
