"""Hot numeric kernels: numba-jitted with pure-numpy fallbacks.

Backend selection: numpy is used when numba is unavailable or the env var
PNRGAN_NUMBA is set to "0" at import time; set_backend() switches at runtime
(the benchmark script uses this). Both paths follow the same accumulation
order on exact integer counts, so split decisions in the forest are identical
across backends; floating-point distance kernels agree to allclose but not
necessarily bitwise (summation order differs).
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba as _nb

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    _nb = None
    _HAVE_NUMBA = False

_BACKEND = "numba" if (_HAVE_NUMBA and os.environ.get("PNRGAN_NUMBA", "1") != "0") else "numpy"


def backend() -> str:
    return _BACKEND


def set_backend(name: str) -> None:
    global _BACKEND
    if name not in ("numpy", "numba"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    _BACKEND = name


# ---------------------------------------------------------------- distances


def _sq_dists_np(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # |a_i - b_j|^2 via the quadratic expansion; clamp FP dust at zero
    d2 = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


if _HAVE_NUMBA:

    @_nb.njit(cache=True, fastmath=False)
    def _sq_dists_nb(a, b):  # pragma: no cover - compiled
        m, k = a.shape
        n = b.shape[0]
        out = np.empty((m, n), dtype=np.float64)
        for i in range(m):
            for j in range(n):
                acc = 0.0
                for t in range(k):
                    d = a[i, t] - b[j, t]
                    acc += d * d
                out[i, j] = acc
        return out


def sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs squared euclidean distances, shape (len(a), len(b))."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if _BACKEND == "numba":
        return _sq_dists_nb(a, b)
    return _sq_dists_np(a, b)


# ------------------------------------------------------------- forest: gini
#
# Both split kernels return (best_score, best_cut, valid). Scores are the
# children's size-weighted Gini impurity; counts are exact int64 and the
# float expressions are written identically in both paths so the chosen
# splits match bitwise across backends.


def _gini_numeric_np(values: np.ndarray, labels: np.ndarray, n_classes: int):
    n = values.shape[0]
    order = np.argsort(values, kind="stable")
    v = values[order]
    y = labels[order]
    onehot = np.zeros((n, n_classes), dtype=np.int64)
    onehot[np.arange(n), y] = 1
    left = np.cumsum(onehot, axis=0)  # counts for splits after position i
    total = left[-1]
    nl = np.arange(1, n + 1, dtype=np.float64)
    nr = n - nl
    sq_l = (left.astype(np.float64) ** 2).sum(axis=1)
    sq_r = ((total[None, :] - left).astype(np.float64) ** 2).sum(axis=1)
    valid = (v[:-1] < v[1:])  # candidate between distinct neighbors only
    if not valid.any():
        return np.inf, 0.0, False
    gl = 1.0 - sq_l[:-1] / (nl[:-1] * nl[:-1])
    gr = 1.0 - sq_r[:-1] / (nr[:-1] * nr[:-1])
    score = (nl[:-1] * gl + nr[:-1] * gr) / float(n)
    score[~valid] = np.inf
    best = int(np.argmin(score))  # first minimum = scan order of the nb path
    return float(score[best]), float(0.5 * (v[best] + v[best + 1])), True


if _HAVE_NUMBA:

    @_nb.njit(cache=True, fastmath=False)
    def _gini_numeric_nb(values, labels, n_classes):  # pragma: no cover - compiled
        n = values.shape[0]
        order = np.argsort(values)
        left = np.zeros(n_classes, dtype=np.int64)
        total = np.zeros(n_classes, dtype=np.int64)
        for i in range(n):
            total[labels[i]] += 1
        best_score = np.inf
        best_cut = 0.0
        found = False
        for i in range(n - 1):
            left[labels[order[i]]] += 1
            vi = values[order[i]]
            vj = values[order[i + 1]]
            if vi >= vj:
                continue
            nl = float(i + 1)
            nr = float(n - i - 1)
            sq_l = 0.0
            sq_r = 0.0
            for c in range(n_classes):
                fl = float(left[c])
                fr = float(total[c] - left[c])
                sq_l += fl * fl
                sq_r += fr * fr
            gl = 1.0 - sq_l / (nl * nl)
            gr = 1.0 - sq_r / (nr * nr)
            score = (nl * gl + nr * gr) / float(n)
            if score < best_score:
                best_score = score
                best_cut = 0.5 * (vi + vj)
                found = True
        return best_score, best_cut, found


def gini_numeric(values: np.ndarray, labels: np.ndarray, n_classes: int):
    """Best threshold split of a fully observed numeric feature."""
    if _BACKEND == "numba":
        return _gini_numeric_nb(values, labels, n_classes)
    return _gini_numeric_np(values, labels, n_classes)


def _gini_onevsrest_np(codes: np.ndarray, labels: np.ndarray, n_levels: int, n_classes: int):
    n = codes.shape[0]
    # level histogram; slot 0 holds the missing code (-1)
    hist = np.zeros((n_levels + 1, n_classes), dtype=np.int64)
    np.add.at(hist, (codes + 1, labels), 1)
    total = hist.sum(axis=0)
    best_score, best_level, found = np.inf, 0, False
    for slot in range(n_levels + 1):
        nl = int(hist[slot].sum())
        if nl == 0 or nl == n:
            continue
        nr = n - nl
        fl = hist[slot].astype(np.float64)
        fr = (total - hist[slot]).astype(np.float64)
        gl = 1.0 - float((fl * fl).sum()) / (float(nl) * float(nl))
        gr = 1.0 - float((fr * fr).sum()) / (float(nr) * float(nr))
        score = (float(nl) * gl + float(nr) * gr) / float(n)
        if score < best_score:
            best_score, best_level, found = score, slot - 1, True
    return best_score, best_level, found


if _HAVE_NUMBA:

    @_nb.njit(cache=True, fastmath=False)
    def _gini_onevsrest_nb(codes, labels, n_levels, n_classes):  # pragma: no cover - compiled
        n = codes.shape[0]
        hist = np.zeros((n_levels + 1, n_classes), dtype=np.int64)
        total = np.zeros(n_classes, dtype=np.int64)
        for i in range(n):
            hist[codes[i] + 1, labels[i]] += 1
            total[labels[i]] += 1
        best_score = np.inf
        best_level = 0
        found = False
        for slot in range(n_levels + 1):
            nl = 0
            for c in range(n_classes):
                nl += hist[slot, c]
            if nl == 0 or nl == n:
                continue
            nr = n - nl
            sq_l = 0.0
            sq_r = 0.0
            for c in range(n_classes):
                fl = float(hist[slot, c])
                fr = float(total[c] - hist[slot, c])
                sq_l += fl * fl
                sq_r += fr * fr
            gl = 1.0 - sq_l / (float(nl) * float(nl))
            gr = 1.0 - sq_r / (float(nr) * float(nr))
            score = (float(nl) * gl + float(nr) * gr) / float(n)
            if score < best_score:
                best_score = score
                best_level = slot - 1
                found = True
        return best_score, best_level, found


def gini_onevsrest(codes: np.ndarray, labels: np.ndarray, n_levels: int, n_classes: int):
    """Best one-vs-rest level split of a categorical feature (-1 = missing)."""
    if _BACKEND == "numba":
        return _gini_onevsrest_nb(codes, labels, n_levels, n_classes)
    return _gini_onevsrest_np(codes, labels, n_levels, n_classes)


# ------------------------------------------------------------ forest: apply


def _tree_apply_np(feature, threshold, cat_level, is_cat, default_left, left, right, leaf_class, X):
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    active = leaf_class[node] < 0
    while active.any():
        idx = np.nonzero(active)[0]
        nd = node[idx]
        f = feature[nd]
        x = X[idx, f]
        go_left = np.empty(idx.shape[0], dtype=bool)
        cat = is_cat[nd]
        go_left[cat] = x[cat] == cat_level[nd][cat]
        num = ~cat
        xn = x[num]
        miss = np.isnan(xn)
        gl = xn <= threshold[nd][num]
        gl[miss] = default_left[nd][num][miss]
        go_left[num] = gl
        node[idx] = np.where(go_left, left[nd], right[nd])
        active[idx] = leaf_class[node[idx]] < 0
    return node


if _HAVE_NUMBA:

    @_nb.njit(cache=True, fastmath=False)
    def _tree_apply_nb(
        feature, threshold, cat_level, is_cat, default_left, left, right, leaf_class, X
    ):  # pragma: no cover - compiled
        n = X.shape[0]
        out = np.empty(n, dtype=np.int64)
        for i in range(n):
            node = 0
            while leaf_class[node] < 0:
                x = X[i, feature[node]]
                if is_cat[node]:
                    go_left = x == cat_level[node]
                elif np.isnan(x):
                    go_left = default_left[node]
                else:
                    go_left = x <= threshold[node]
                node = left[node] if go_left else right[node]
            out[i] = node
        return out


def tree_apply(feature, threshold, cat_level, is_cat, default_left, left, right, leaf_class, X):
    """Leaf index reached by each row of X. Routing is discrete, so both
    backends are exactly equal."""
    if _BACKEND == "numba":
        return _tree_apply_nb(
            feature, threshold, cat_level, is_cat, default_left, left, right, leaf_class, X
        )
    return _tree_apply_np(feature, threshold, cat_level, is_cat, default_left, left, right, leaf_class, X)
