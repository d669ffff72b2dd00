"""Tree ensembles: second-order gradient boosting and bagged random forests.

Both learners share one tree grower. Boosting feeds it squared-error
gradients ``g = pred - y`` with unit hessians; the forest feeds it
``g = -w * y`` and ``h = w`` where ``w`` are bootstrap counts, which turns the
gain into plain variance reduction and the leaf weight into the resident
mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._treekernels import grow_tree, make_workspace, predict_forest

BOOSTED = "boosted"
BAGGED = "bagged"


@dataclass
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf. Node 0 is the root."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @classmethod
    def leaf(cls, weight: float) -> "Tree":
        return cls(
            np.array([-1], np.int64),
            np.zeros(1),
            np.array([-1], np.int64),
            np.array([-1], np.int64),
            np.array([float(weight)]),
        )

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return predict_forest(
            X, self.feature, self.threshold, self.left, self.right, self.value,
            np.array([0, self.n_nodes], np.int64),
        )

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row."""
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(len(X), np.int64)
        for i, row in enumerate(X):
            nd = 0
            while self.feature[nd] >= 0:
                nd = self.left[nd] if row[self.feature[nd]] <= self.threshold[nd] else self.right[nd]
            out[i] = nd
        return out

    def depth(self) -> int:
        def _depth(nd: int) -> int:
            if self.feature[nd] < 0:
                return 0
            return 1 + max(_depth(self.left[nd]), _depth(self.right[nd]))

        return _depth(0)


@dataclass
class GbtParams:
    rounds: int = 200
    eta: float = 0.3
    lam: float = 1.0
    gamma: float = 0.0
    max_depth: int = 6
    min_child_weight: float = 1.0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("lam and gamma must be non-negative")


@dataclass
class TreeEnsembleModel:
    """Boosted: ``base_score + eta * sum(trees)``; bagged: mean of trees."""

    mode: str
    trees: list[Tree] = field(default_factory=list)
    base_score: float = 0.0
    eta: float = 1.0
    feature_dim: int = 0

    def _packed(self):
        if not self.trees:
            return None
        offsets = np.zeros(len(self.trees) + 1, np.int64)
        offsets[1:] = np.cumsum([t.n_nodes for t in self.trees])
        cat = lambda name: np.concatenate([getattr(t, name) for t in self.trees])  # noqa: E731
        return (cat("feature"), cat("threshold"), cat("left"), cat("right"), cat("value"), offsets)

    def _check(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.feature_dim:
            raise ValueError(f"expected {self.feature_dim} features, got {X.shape[1]}")
        return X

    def raw_sum(self, X, n_trees: int | None = None) -> np.ndarray:
        X = self._check(X)
        trees = self.trees if n_trees is None else self.trees[:n_trees]
        if not trees:
            return np.zeros(len(X))
        sub = TreeEnsembleModel(self.mode, trees, feature_dim=self.feature_dim)
        return predict_forest(X, *sub._packed())

    def predict(self, X, n_trees: int | None = None) -> np.ndarray:
        """Batch prediction; ``n_trees`` truncates the ensemble (staged output)."""
        X = self._check(X)
        total = self.raw_sum(X, n_trees)
        if self.mode == BOOSTED:
            return self.base_score + self.eta * total
        k = len(self.trees) if n_trees is None else min(n_trees, len(self.trees))
        if k == 0:
            return np.full(len(X), self.base_score)
        return total / k


def _presort(X: np.ndarray):
    order = np.ascontiguousarray(np.argsort(X.T, axis=1, kind="stable"))
    return order, np.ascontiguousarray(np.take_along_axis(X.T, order, axis=1))


def _as_training_data(features, target):
    X = np.ascontiguousarray(features, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64).ravel()
    if X.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    if len(X) == 0 or len(y) == 0:
        raise ValueError("empty training data")
    if len(X) != len(y):
        raise ValueError(f"{len(X)} feature rows but {len(y)} targets")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data contains non-finite values")
    return X, y


def fit_gbt(features, target, params: GbtParams | None = None) -> TreeEnsembleModel:
    """Gradient-boosted regression trees on squared error (``h_i = 1``)."""
    params = params or GbtParams()
    X, y = _as_training_data(features, target)
    if len(y) < 2:
        raise ValueError("need at least 2 samples")
    order, xs = _presort(X)
    work = make_workspace(*X.shape)
    active = np.ones(len(y), np.bool_)
    hess = np.ones(len(y))
    base = float(np.mean(y))
    model = TreeEnsembleModel(BOOSTED, [], base, params.eta, X.shape[1])
    acc = np.zeros(len(y))
    pred = np.full(len(y), base)
    for _ in range(params.rounds):
        grad = pred - y
        feat, thr, lft, rgt, val, leaf_of = grow_tree(
            X, order, xs, grad, hess, active, params.max_depth, params.lam,
            params.gamma, params.min_child_weight, 1.0, 0, work,
        )
        model.trees.append(Tree(feat, thr, lft, rgt, val))
        acc += val[leaf_of]
        pred = base + params.eta * acc
    return model


def predict_gbt(model: TreeEnsembleModel, x) -> np.ndarray | float:
    """Prediction for one feature vector (float) or a matrix of rows (array)."""
    if model.mode != BOOSTED:
        raise ValueError("predict_gbt expects a boosted model")
    single = np.ndim(x) == 1
    out = model.predict(x)
    return float(out[0]) if single else out


def fit_random_forest(
    features,
    target,
    n_trees: int = 100,
    max_depth: int = 8,
    feature_subsample: float = 1.0 / 3.0,
    seed: int = 0,
    bootstrap: bool = True,
    min_samples_leaf: int = 1,
) -> TreeEnsembleModel:
    """Bagged variance-reduction trees; fully determined by ``seed``."""
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if not 0.0 < feature_subsample <= 1.0:
        raise ValueError("feature_subsample must lie in (0, 1]")
    X, y = _as_training_data(features, target)
    n = len(y)
    order, xs = _presort(X)
    work = make_workspace(*X.shape)
    rng = np.random.default_rng(seed)
    model = TreeEnsembleModel(BAGGED, [], float(np.mean(y)), 1.0, X.shape[1])
    for _ in range(n_trees):
        if bootstrap:
            w = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.float64)
        else:
            w = np.ones(n)
        tree_seed = int(rng.integers(0, 2**31 - 1))
        feat, thr, lft, rgt, val, _ = grow_tree(
            X, order, xs, -w * y, w, w > 0, max_depth, 0.0, 0.0,
            float(min_samples_leaf), feature_subsample, tree_seed, work,
        )
        model.trees.append(Tree(feat, thr, lft, rgt, val))
    return model


def count_parameters(model: TreeEnsembleModel) -> int:
    """Two numbers per internal node (feature, threshold), one per leaf."""
    total = 0
    for t in model.trees:
        leaves = t.n_leaves
        total += 2 * (t.n_nodes - leaves) + leaves
    return total
