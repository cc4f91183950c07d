"""Classical learners and rank tests backing the evaluation suite.

Random forests consume typed Datasets directly (numeric thresholds,
one-vs-rest level splits, Missing handled natively); logistic regression
and the k-NN / KS / Wilcoxon primitives work on plain real matrices.
Everything is deterministic given its seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import accel
from .data import Dataset
from .rng import Stream


class LearnerError(ValueError):
    """Input violated a learner's contract."""


@dataclass(frozen=True)
class TestResult:
    """A test statistic with its (already one- or two-sided) p-value."""

    statistic: float
    p_value: float

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise LearnerError(f"p-value {self.p_value} outside [0, 1]")


def accuracy(y_true, y_pred) -> float:
    """Fraction of matching labels."""
    a = np.asarray(y_true)
    b = np.asarray(y_pred)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise LearnerError("accuracy needs two equal-length nonempty label arrays")
    return float(np.mean(a == b))


# -------------------------------------------------------------- random forest
#
# CART with Gini impurity. Numeric splits threshold the observed values and
# send Missing down a learned default direction (the side holding the
# majority of observed rows, ties left). Categorical splits are one-vs-rest
# on a single level, with Missing (-1) as its own candidate level. Nodes
# split while mixed and >= 2 rows; a node whose sampled features admit no
# valid split becomes a (possibly mixed) leaf.


@dataclass(frozen=True)
class _Tree:
    """Flat node arrays in the layout accel.tree_apply consumes.

    leaf_class is -1 on internal nodes; leaf_counts holds the class-count
    vector of each leaf (zeros on internal nodes)."""

    feature: np.ndarray
    threshold: np.ndarray
    cat_level: np.ndarray
    is_cat: np.ndarray
    default_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_class: np.ndarray
    leaf_counts: np.ndarray


@dataclass(frozen=True)
class ForestModel:
    trees: tuple
    tree_seeds: tuple  # bootstrap + split-sampling seed of each tree
    schema: object
    n_classes: int
    m_features: int  # features drawn per split

    def __post_init__(self):
        if len(self.trees) < 1:
            raise LearnerError("a forest needs at least one tree")


def _apply_matrix(data: Dataset) -> np.ndarray:
    """Rows as float64: numeric values (NaN = Missing) and level codes
    (-1.0 = Missing) share one matrix for routing."""
    out = np.empty((len(data), len(data.schema)), dtype=np.float64)
    for i in range(len(data.schema)):
        out[:, i] = data.column_array(i)
    return out


def _grow_tree(cols, cat_mask, n_levels, y, n_classes, m, rows, feat_stream):
    feature, threshold, cat_level = [], [], []
    is_cat, default_left = [], []
    left, right, leaf_class = [], [], []
    leaf_counts = {}
    n_features = len(cols)

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        cat_level.append(0.0)
        is_cat.append(False)
        default_left.append(False)
        left.append(-1)
        right.append(-1)
        leaf_class.append(-1)
        return len(feature) - 1

    stack = [(new_node(), rows)]
    while stack:
        node, idx = stack.pop()
        ylocal = y[idx]
        counts = np.bincount(ylocal, minlength=n_classes)
        if idx.shape[0] < 2 or int(counts.max()) == idx.shape[0]:
            leaf_class[node] = int(counts.argmax())
            leaf_counts[node] = counts
            continue

        best_score = np.inf
        best = None
        for f in feat_stream.subsample(n_features, m):
            f = int(f)
            vals = cols[f][idx]
            if cat_mask[f]:
                score, level, found = accel.gini_onevsrest(vals, ylocal, n_levels[f], n_classes)
                if found and score < best_score:
                    best_score, best = score, (f, True, float(level), False)
            else:
                obs = ~np.isnan(vals)
                n_obs = int(obs.sum())
                if n_obs < 2:
                    continue
                score, cut, found = accel.gini_numeric(vals[obs], ylocal[obs], n_classes)
                if found and score < best_score:
                    n_left = int((vals[obs] <= cut).sum())
                    best_score, best = score, (f, False, float(cut), n_left >= n_obs - n_left)
        if best is None:
            leaf_class[node] = int(counts.argmax())
            leaf_counts[node] = counts
            continue

        f, cat, val, dl = best
        vals = cols[f][idx]
        if cat:
            go_left = vals == val
        else:
            go_left = vals <= val
            go_left[np.isnan(vals)] = dl
        feature[node] = f
        is_cat[node] = cat
        if cat:
            cat_level[node] = val
        else:
            threshold[node] = val
            default_left[node] = dl
        lnode, rnode = new_node(), new_node()
        left[node], right[node] = lnode, rnode
        stack.append((rnode, idx[~go_left]))
        stack.append((lnode, idx[go_left]))  # popped next: depth-first, left first

    n_nodes = len(feature)
    counts_arr = np.zeros((n_nodes, n_classes), dtype=np.int64)
    for node, c in leaf_counts.items():
        counts_arr[node] = c
    return _Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        cat_level=np.asarray(cat_level, dtype=np.float64),
        is_cat=np.asarray(is_cat, dtype=bool),
        default_left=np.asarray(default_left, dtype=bool),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        leaf_class=np.asarray(leaf_class, dtype=np.int64),
        leaf_counts=counts_arr,
    )


def _check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n:
        raise LearnerError(f"expected {n} training labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise LearnerError("labels must be integer class codes")
    y = y.astype(np.int64)
    if n and int(y.min()) < 0:
        raise LearnerError("labels must be nonnegative class codes")
    if np.unique(y).size < 2:
        raise LearnerError("training labels contain a single class")
    return y


def rf_fit(trainX: Dataset, trainY, trees: int = 100, seed=0) -> ForestModel:
    """Fit `trees` CART trees on bootstrap samples of size n, drawing
    ceil(sqrt(#features)) candidate features per split. Tree t derives all
    its randomness from seed + t."""
    y = _check_labels(trainY, len(trainX))
    if trees < 1:
        raise LearnerError("a forest needs at least one tree")
    n = len(trainX)
    n_classes = int(y.max()) + 1
    cols = [trainX.column_array(i) for i in range(len(trainX.schema))]
    cat_mask = [not c.is_numeric for c in trainX.schema]
    n_levels = [0 if c.is_numeric else len(c.levels) for c in trainX.schema]
    m = int(math.ceil(math.sqrt(len(cols))))
    tree_seeds = tuple(int(seed) + t for t in range(trees))

    grown = []
    for ts in tree_seeds:
        s = Stream(ts)
        boot = s.child("bootstrap").integers(0, n, n)
        grown.append(
            _grow_tree(cols, cat_mask, n_levels, y, n_classes, m, boot, s.child("features"))
        )
    return ForestModel(
        trees=tuple(grown),
        tree_seeds=tree_seeds,
        schema=trainX.schema,
        n_classes=n_classes,
        m_features=m,
    )


def _tree_classes(tree: _Tree, X: np.ndarray) -> np.ndarray:
    leaves = accel.tree_apply(
        tree.feature,
        tree.threshold,
        tree.cat_level,
        tree.is_cat,
        tree.default_left,
        tree.left,
        tree.right,
        tree.leaf_class,
        X,
    )
    return tree.leaf_class[leaves]


def rf_predict(model: ForestModel, data: Dataset) -> np.ndarray:
    """Majority vote over trees, ties to the lowest class index."""
    if data.schema != model.schema:
        raise LearnerError("prediction data does not match the training schema")
    X = _apply_matrix(data)
    votes = np.zeros((len(data), model.n_classes), dtype=np.int64)
    rows = np.arange(len(data))
    for tree in model.trees:
        votes[rows, _tree_classes(tree, X)] += 1
    return votes.argmax(axis=1).astype(np.int64)


def rf_fit_predict(trainX: Dataset, trainY, testX: Dataset, trees: int = 100, seed=0) -> np.ndarray:
    return rf_predict(rf_fit(trainX, trainY, trees=trees, seed=seed), testX)


# -------------------------------------------------------- logistic regression
#
# Gradient descent with Armijo backtracking on
#   J(w, b) = (sum_i log(1 + exp(-s_i (x_i w + b))) + l2/2 ||w||^2) / n
# (intercept unpenalized), stopping at gradient norm <= 1e-6 or 10000 steps.
# The problem is convex and the start is fixed at zero, so the seed argument
# only exists for interface uniformity.

_LOGREG_TOL = 1e-6
_LOGREG_MAX_STEPS = 10000


def _logistic(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _logreg_objective(X, sgn, w, b, l2) -> float:
    t = sgn * (X @ w + b)
    return float((np.logaddexp(0.0, -t).sum() + 0.5 * l2 * (w @ w)) / X.shape[0])


def logreg_fit(trainX, trainY, l2: float = 1.0, seed=0):
    """Returns (weights, intercept) for labels in {0, 1}."""
    X = np.asarray(trainX, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise LearnerError(f"expected a nonempty 2-D feature matrix, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise LearnerError("non-finite values in features")
    y = np.asarray(trainY)
    if y.shape != (X.shape[0],) or not np.isin(y, (0, 1)).all():
        raise LearnerError("labels must be 0/1 and align with the feature rows")
    if not (math.isfinite(l2) and l2 >= 0.0):
        raise LearnerError(f"l2 must be a finite nonnegative real, got {l2}")
    sgn = 2.0 * np.asarray(y, dtype=np.float64) - 1.0
    n, d = X.shape

    w = np.zeros(d)
    b = 0.0
    obj = _logreg_objective(X, sgn, w, b, l2)
    for _ in range(_LOGREG_MAX_STEPS):
        t = sgn * (X @ w + b)
        r = sgn * _logistic(-t)
        gw = (l2 * w - X.T @ r) / n
        gb = -float(r.sum()) / n
        gsq = float(gw @ gw) + gb * gb
        if gsq <= _LOGREG_TOL * _LOGREG_TOL:
            break
        step = 1.0
        for _ in range(60):
            w2 = w - step * gw
            b2 = b - step * gb
            obj2 = _logreg_objective(X, sgn, w2, b2, l2)
            if obj2 <= obj - 1e-4 * step * gsq:
                break
            step *= 0.5
        w, b, obj = w2, b2, obj2
    return w, b


def logreg_predict(weights, intercept, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if not np.isfinite(X).all():
        raise LearnerError("non-finite values in features")
    # sigmoid(z) >= 0.5 exactly when z >= 0
    return (X @ weights + intercept >= 0.0).astype(np.int64)


def logreg_fit_predict(trainX, trainY, testX, l2: float = 1.0, seed=0) -> np.ndarray:
    w, b = logreg_fit(trainX, trainY, l2=l2, seed=seed)
    return logreg_predict(w, b, testX)


# ----------------------------------------------------------- nearest neighbors


def knn_neighbors(index, query, k: int, exclude_self: bool = False):
    """Indices and Euclidean distances of the k nearest index rows to query,
    nearest first, distance ties broken by insertion order. exclude_self
    removes index rows exactly equal to the query (for queries that are
    themselves members of the index)."""
    pts = np.asarray(index, dtype=np.float64)
    q = np.asarray(query, dtype=np.float64).ravel()
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise LearnerError("empty or non-2-D neighbor index")
    if q.shape[0] != pts.shape[1]:
        raise LearnerError(f"query has {q.shape[0]} coordinates, index rows have {pts.shape[1]}")
    d2 = accel.sq_dists(q[None, :], pts)[0]
    order = np.argsort(d2, kind="stable")
    if exclude_self:
        order = order[~np.all(pts[order] == q, axis=1)]
    if not 1 <= k <= order.shape[0]:
        raise LearnerError(f"k={k} out of range for {order.shape[0]} candidate points")
    sel = order[:k]
    return sel.astype(np.int64), np.sqrt(d2[sel])


# ------------------------------------------------------------------- KS test


def _kolmogorov_tail(t: float) -> float:
    """Q(t) = 2 sum_j (-1)^(j-1) exp(-2 j^2 t^2), truncated once terms fall
    below 1e-10 relative to the running sum."""
    if t <= 0.0:
        return 1.0
    total = 0.0
    for j in range(1, 100000):
        term = 2.0 * (-1.0) ** (j - 1) * math.exp(-2.0 * j * j * t * t)
        total += term
        if abs(term) < 1e-10 * max(1.0, abs(total)):
            break
    return min(1.0, max(0.0, total))


def ks_two_sample(a, b) -> TestResult:
    """Two-sample Kolmogorov-Smirnov: D = sup |ECDF_a - ECDF_b| over the
    pooled sample points, p from the asymptotic Kolmogorov tail."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise LearnerError("KS test needs two nonempty samples")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise LearnerError("non-finite values in samples")
    sa, sb = np.sort(a), np.sort(b)
    pool = np.concatenate([sa, sb])
    fa = np.searchsorted(sa, pool, side="right") / a.size
    fb = np.searchsorted(sb, pool, side="right") / b.size
    d = float(np.abs(fa - fb).max())
    t = d * math.sqrt(a.size * b.size / (a.size + b.size))
    return TestResult(d, _kolmogorov_tail(t))


# ------------------------------------------------------------- Wilcoxon test


def wilcoxon_one_sided(diffs) -> TestResult:
    """One-sided Wilcoxon signed-rank on paired differences, alternative
    "differences < 0". Zero differences are dropped, tied magnitudes get
    average ranks, and the p-value comes from the normal approximation with
    tie-corrected variance and a 0.5 continuity correction. The statistic is
    W, the rank sum of the positive differences, so small W rejects."""
    d = np.asarray(diffs, dtype=np.float64).ravel()
    if not np.isfinite(d).all():
        raise LearnerError("non-finite values in differences")
    d = d[d != 0.0]
    if d.size == 0:
        raise LearnerError("all differences are zero")
    n = d.size

    absd = np.abs(d)
    _, inverse, counts = np.unique(absd, return_inverse=True, return_counts=True)
    first_rank = np.cumsum(counts) - counts + 1  # rank of each group's first entry
    avg_rank = first_rank + (counts - 1) / 2.0
    ranks = avg_rank[inverse]

    w = float(ranks[d > 0.0].sum())
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float((counts**3 - counts).sum()) / 48.0
    z = (w + 0.5 - mean) / math.sqrt(var)
    p = 0.5 * math.erfc(-z / math.sqrt(2.0))
    return TestResult(w, min(1.0, max(0.0, p)))
