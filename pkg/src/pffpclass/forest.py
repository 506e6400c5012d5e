"""Random-forest prior over the four sediment classes.

Trees are CART classifiers grown greedily on Gini impurity from the two
summary features. A fitted tree is stored as flat pre-order node arrays,
which is also its serialized form.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import N_CLASSES
from .corpus import random_oversample
from .errors import EmptyHistogram, GridEmpty, UntrainedModel

SUBSAMPLE_FRACTION = 0.632  # "bootstrap without replacement" draw size

DEFAULT_GRID = {
    "n_trees": (100, 200, 500),
    "max_depth": (None, 5, 10, 20),
    "min_samples_split": (2, 5, 10),
    "min_samples_leaf": (1, 2, 4),
    "bootstrap": (True, False),
}


@dataclass(frozen=True)
class HyperParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    bootstrap: bool = True  # True: with replacement; False: 63.2 % subsample
    features_per_split: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("n_trees", "min_samples_split", "min_samples_leaf"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be positive or None")
        if self.min_samples_leaf > self.min_samples_split:
            raise ValueError("min_samples_leaf may not exceed min_samples_split")
        if self.features_per_split not in (1, 2):
            raise ValueError("features_per_split must be 1 or 2")


@dataclass(frozen=True)
class Tree:
    """Pre-order node arrays. Leaves have ``feature == -1`` and children ``-1``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, 4) class histogram of training rows reaching the node

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            go_left = X[rows, np.maximum(f, 0)] <= self.threshold[node]
            step = np.where(go_left, self.left[node], self.right[node])
            node = np.where(inner, step, node)

    def predict_proba(self, X) -> np.ndarray:
        counts = self.counts[self.apply(X)]
        return counts / counts.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class ForestModel:
    trees: tuple
    hyperparams: HyperParams

    def __post_init__(self):
        if len(self.trees) == 0:
            raise UntrainedModel("a forest needs at least one tree")


def gini(histogram) -> float:
    """Gini impurity ``1 - sum(p_i^2)`` of a class histogram."""
    h = np.asarray(histogram, dtype=float)
    total = h.sum()
    if not total > 0:
        raise EmptyHistogram("histogram is empty")
    p = h / total
    return float(1.0 - np.dot(p, p))


def _best_split(X, onehot, idx, counts, feature_order, fps, min_leaf):
    """Best (feature, threshold, left_mask) for rows ``idx`` or None.

    Candidates are midpoints between consecutive distinct sorted values; the
    score is the size-weighted child impurity ``n_L*G_L + n_R*G_R``. Features
    past the first ``fps`` are examined only when none of those had a valid
    split.
    """
    n = idx.size
    best = None
    best_score = np.inf
    for pos, f in enumerate(feature_order):
        if pos >= fps and best is not None:
            break
        xs = X[idx, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        lo, hi = min_leaf - 1, n - min_leaf  # split after position i, lo <= i < hi
        pos_ok = xs[lo:hi] < xs[lo + 1 : hi + 1]
        if not pos_ok.any():
            continue
        left = np.cumsum(onehot[idx[order]], axis=0)[lo:hi]
        right = counts - left
        n_left = np.arange(lo + 1, hi + 1, dtype=float)
        n_right = n - n_left
        score = (n_left - np.einsum("ij,ij->i", left, left) / n_left) + (
            n_right - np.einsum("ij,ij->i", right, right) / n_right
        )
        score[~pos_ok] = np.inf
        i = int(np.argmin(score)) + lo
        if score[i - lo] < best_score:
            thr = 0.5 * (xs[i] + xs[i + 1])
            if not thr < xs[i + 1]:
                thr = xs[i]
            best_score = score[i - lo]
            best = (int(f), float(thr))
    return best


def train_tree(X, y, hyper: HyperParams, rng) -> Tree:
    """Grow one tree on rows ``X`` (n, n_features) with labels ``y`` in 1..4."""
    X = np.asarray(X, dtype=float)
    y0 = np.asarray(y, dtype=int) - 1
    n_features = X.shape[1]
    fps = min(hyper.features_per_split, n_features)
    onehot = np.eye(N_CLASSES)[y0]

    feature, threshold, left, right, counts = [], [], [], [], []
    stack = [(np.arange(X.shape[0]), 0, -1, None)]
    while stack:
        idx, depth, parent, side = stack.pop()
        node = len(feature)
        if parent >= 0:
            (left if side == "L" else right)[parent] = node
        hist = np.bincount(y0[idx], minlength=N_CLASSES).astype(float)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(hist)

        n = idx.size
        if (
            (hyper.max_depth is not None and depth >= hyper.max_depth)
            or n < hyper.min_samples_split
            or n < 2 * hyper.min_samples_leaf
            or hist.max() == n
        ):
            continue
        split_ = _best_split(
            X, onehot, idx, hist, rng.permutation(n_features), fps, hyper.min_samples_leaf
        )
        if split_ is None:
            continue
        f, thr = split_
        go_left = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        # right pushed first so the left subtree is numbered first (pre-order)
        stack.append((idx[~go_left], depth + 1, node, "R"))
        stack.append((idx[go_left], depth + 1, node, "L"))

    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(counts, dtype=float).reshape(-1, N_CLASSES),
    )


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    # spawn_key makes tree i's stream independent of how many trees are grown
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tree_index,)))


def bootstrap_indices(n: int, hyper: HyperParams, rng) -> np.ndarray:
    if hyper.bootstrap:
        return rng.integers(0, n, size=n)
    size = max(1, int(round(SUBSAMPLE_FRACTION * n)))
    return np.sort(rng.choice(n, size=size, replace=False))


def _grow(X, y, hyper, tree_index):
    rng = tree_rng(hyper.seed, tree_index)
    rows = bootstrap_indices(X.shape[0], hyper, rng)
    return train_tree(X[rows], y[rows], hyper, rng), rows


def train_forest(X, y, hyper: HyperParams) -> ForestModel:
    """Fit ``hyper.n_trees`` trees, each on its own bootstrap draw.

    ``X`` should already be balanced (see :func:`random_oversample`).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    trees = tuple(_grow(X, y, hyper, i)[0] for i in range(hyper.n_trees))
    return ForestModel(trees, hyper)


def predict_proba(model: ForestModel, X) -> np.ndarray:
    """Mean of per-tree leaf class frequencies.

    Accepts a single feature pair (returns shape (4,)) or a matrix (n, 4).
    """
    if model is None or not getattr(model, "trees", None):
        raise UntrainedModel("forest has not been trained")
    if hasattr(X, "as_array"):
        X = X.as_array()
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    proba = np.zeros((X2.shape[0], N_CLASSES))
    for tree in model.trees:
        proba += tree.predict_proba(X2)
    proba /= len(model.trees)
    return proba[0] if single else proba


def oob_accuracy(model: ForestModel, X, y) -> float:
    """Out-of-bag accuracy; ``X, y`` must be the exact training rows of ``model``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    votes = np.zeros((X.shape[0], N_CLASSES))
    for i, tree in enumerate(model.trees):
        rows = bootstrap_indices(X.shape[0], model.hyperparams, tree_rng(model.hyperparams.seed, i))
        out = np.ones(X.shape[0], dtype=bool)
        out[rows] = False
        if out.any():
            votes[out] += tree.predict_proba(X[out])
    scored = votes.sum(axis=1) > 0
    if not scored.any():
        return float("nan")
    pred = np.argmax(votes[scored], axis=1) + 1
    return float(np.mean(pred == y[scored]))


# -- grid search -------------------------------------------------------------


def expand_grid(grid: dict, base: HyperParams = HyperParams()) -> list:
    """All valid HyperParams in the Cartesian product of ``grid``.

    Combinations with ``min_samples_leaf > min_samples_split`` are dropped.
    """
    keys = list(grid)
    points = []
    for values in itertools.product(*(grid[k] for k in keys)):
        params = dict(zip(keys, values))
        if params.get("min_samples_leaf", base.min_samples_leaf) > params.get(
            "min_samples_split", base.min_samples_split
        ):
            continue
        points.append(replace(base, **params))
    return points


def stratified_folds(y, folds: int, seed: int) -> np.ndarray:
    """Fold id per row; each class is dealt round-robin after a seeded shuffle."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    fold = np.empty(y.size, dtype=int)
    offset = 0
    for c in np.unique(y):
        members = rng.permutation(np.flatnonzero(y == c))
        fold[members] = (np.arange(members.size) + offset) % folds
        offset += members.size
    return fold


@dataclass
class GridSearchResult:
    best: HyperParams
    table: list  # one dict per grid point
    model: ForestModel


def _depth_key(depth):
    return np.inf if depth is None else depth


def _score_group(X, y, fold, group, seed):
    """CV accuracies for grid points that differ only in ``n_trees``.

    Tree ``i`` depends only on (seed, i), so one forest of the largest size
    yields every smaller forest as a prefix.
    """
    n_max = max(h.n_trees for h in group)
    template = replace(group[0], n_trees=n_max)
    scores = {h.n_trees: [] for h in group}
    for k in np.unique(fold):
        tr, te = fold != k, fold == k
        Xb, yb, _ = random_oversample(X[tr], y[tr], seed=seed + int(k))
        running = np.zeros((int(te.sum()), N_CLASSES))
        for i in range(n_max):
            tree, _ = _grow(Xb, yb, template, i)
            running += tree.predict_proba(X[te])
            if i + 1 in scores:
                pred = np.argmax(running, axis=1) + 1
                scores[i + 1].append(float(np.mean(pred == y[te])))
    return [(h, scores[h.n_trees]) for h in group]


def grid_search_cv(X, y, grid=None, folds=5, seed=0, n_jobs=1, base=None) -> GridSearchResult:
    """Pick hyperparameters by stratified k-fold CV accuracy, then refit.

    Each fold's training part is rebalanced with :func:`random_oversample`
    before fitting. Ties in mean accuracy go to fewer trees, then to the
    shallower depth limit. The winner is refit on the whole (rebalanced)
    training set.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    base = base or HyperParams(seed=seed)
    points = expand_grid(DEFAULT_GRID if grid is None else grid, base)
    if not points:
        raise GridEmpty("hyperparameter grid is empty")
    if y.size < folds:
        raise ValueError(f"need at least {folds} rows for {folds}-fold CV")
    fold = stratified_folds(y, folds, seed)

    groups = {}
    for h in points:
        groups.setdefault(replace(h, n_trees=1), []).append(h)
    jobs = list(groups.values())
    if n_jobs != 1 and len(jobs) > 1:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(
            delayed(_score_group)(X, y, fold, g, seed) for g in jobs
        )
    else:
        results = [_score_group(X, y, fold, g, seed) for g in jobs]
    scored = dict(pair for res in results for pair in res)

    table = []
    for order, h in enumerate(points):
        fs = scored[h]
        row = {k: v for k, v in asdict(h).items() if k in DEFAULT_GRID or k == "features_per_split"}
        row.update(fold_scores=fs, mean_accuracy=float(np.mean(fs)), order=order)
        table.append(row)
    best_row = min(
        table,
        key=lambda r: (-r["mean_accuracy"], r["n_trees"], _depth_key(r["max_depth"]), r["order"]),
    )
    best = points[best_row["order"]]
    Xb, yb, _ = random_oversample(X, y, seed=seed)
    return GridSearchResult(best, table, train_forest(Xb, yb, best))
