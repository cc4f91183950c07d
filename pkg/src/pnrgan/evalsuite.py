"""Evaluation battery for a trained synthesizer: univariate reports,
classifier two-sample scores, a local JSD estimate in critic space with
per-point discrepancies, classical MDS projections, memorization tests on
nearest-neighbor distances, and downstream cross-evaluation.

The composite report is a JSON document (sections univariate, two_sample,
jsd, mds, memorization, downstream) with CSV sidecars carrying the MDS
coordinates and NN distances for external plotting.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import accel, gan
from .data import Dataset, Schema
from .encoding import band_encode, encode, fit_plan
from .learners import (
    LearnerError,
    TestResult,
    accuracy,
    ks_two_sample,
    logreg_fit_predict,
    rf_fit_predict,
    wilcoxon_one_sided,
)
from .rng import Stream

EMBED_CAP = 12000  # critic-space points taken from each set
MDS_CAP = 600  # MDS points per side (the projection is quadratic in n)

_NUM_KEYS = ("mean", "std", "min", "25%", "50%", "75%", "max")


class EvalError(ValueError):
    """Evaluation input violated its contract."""


# ------------------------------------------------------------------ helpers


def _concat(parts) -> Dataset:
    schema = parts[0].schema
    cols = [
        np.concatenate([p.column_array(i) for p in parts]) for i in range(len(schema))
    ]
    return Dataset(schema, cols, _validate=False)


def _points(x, what: str) -> np.ndarray:
    p = np.asarray(x, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise EvalError(f"{what} must be a nonempty 2-D point set, got shape {p.shape}")
    return p


def critic_embed(data: Dataset, model: gan.GanModel, seed) -> np.ndarray:
    """Rows -> critic-space k-vectors under the model's own encoding."""
    if model.cfg.encoding == "band":
        enc = band_encode(data, model.codec, model.plan, seed)
    else:
        enc = encode(data, model.plan, seed)
    return gan.critic_h(enc, model.critic_params, model.plan, model.cfg)


# ------------------------------------------------------------------ univariate


def _numeric_stats(col: np.ndarray) -> dict:
    v = col[~np.isnan(col)]
    if v.size == 0:
        return {k: None for k in _NUM_KEYS}
    q = np.percentile(v, [25.0, 50.0, 75.0])  # linear interpolation
    return {
        "mean": float(v.mean()),
        "std": float(v.std(ddof=1)) if v.size > 1 else 0.0,
        "min": float(v.min()),
        "25%": float(q[0]),
        "50%": float(q[1]),
        "75%": float(q[2]),
        "max": float(v.max()),
    }


def _level_freqs(col: np.ndarray, levels) -> dict:
    n = max(col.size, 1)
    out = {lvl: float(np.mean(col == k)) if col.size else 0.0 for k, lvl in enumerate(levels)}
    out["Missing"] = float(np.sum(col == -1)) / n
    return out


def univariate_report(real: Dataset, synth: Dataset) -> dict:
    """Per-column stats pair: moments and quantiles over non-missing numeric
    cells, level frequency tables (Missing included) for the rest."""
    if real.schema != synth.schema:
        raise EvalError("real and synthetic schemas differ")
    out = {}
    for i, spec in enumerate(real.schema):
        if spec.is_numeric:
            pair = {
                "real": _numeric_stats(real.column_array(i)),
                "synth": _numeric_stats(synth.column_array(i)),
            }
        else:
            pair = {
                "real": _level_freqs(real.column_array(i), spec.levels),
                "synth": _level_freqs(synth.column_array(i), spec.levels),
            }
        out[spec.name] = {"kind": spec.kind, **pair}
    return out


# ------------------------------------------------------------------ two-sample


def two_sample_score(real: Dataset, synth: Dataset, learner: str = "rf", seed=0) -> float:
    """Accuracy of a classifier told to separate real (label 0) from
    synthetic (label 1), on a balanced held-out split. Chance level 0.5
    means the sets are indistinguishable to that learner."""
    if real.schema != synth.schema:
        raise EvalError("real and synthetic schemas differ")
    if learner not in ("rf", "logreg"):
        raise EvalError(f"unknown learner {learner!r}")
    m = min(len(real), len(synth))
    if m < 4:
        raise EvalError(f"need at least 4 rows per side, got {m}")
    s = Stream(seed).child("two_sample")
    pr = s.child("real").permutation(len(real))[:m]
    ps = s.child("synth").permutation(len(synth))[:m]
    h = m // 2
    train = _concat([real.take(pr[:h]), synth.take(ps[:h])])
    test = _concat([real.take(pr[h:]), synth.take(ps[h:])])
    ytr = np.repeat(np.array([0, 1], dtype=np.int64), h)
    yte = np.repeat(np.array([0, 1], dtype=np.int64), m - h)
    if learner == "rf":
        pred = rf_fit_predict(train, ytr, test, trees=100, seed=int(s.child("rf").raw(1)[0] >> 32))
    else:
        plan = fit_plan(train)
        xtr = np.asarray(encode(train, plan, s.child("enc_tr")).values, dtype=np.float64)
        xte = np.asarray(encode(test, plan, s.child("enc_te")).values, dtype=np.float64)
        pred = logreg_fit_predict(xtr, ytr, xte, l2=1.0)
    return accuracy(yte, pred)


# -------------------------------------------------------------------- local JSD


def _binary_entropy_bits(p: np.ndarray) -> np.ndarray:
    h = np.zeros_like(p)
    inner = (p > 0.0) & (p < 1.0)
    q = p[inner]
    h[inner] = -(q * np.log2(q) + (1.0 - q) * np.log2(1.0 - q))
    return h


def jsd_local(realH, synthH, k_nn: int = 50):
    """Pool both embeddings; p_hat(z) = synthetic fraction among the k_nn
    nearest pooled neighbors of z (self excluded); delta(z) = 1 - H2(p_hat)
    in bits. Returns (mean delta, per-point deltas in pool order: real
    points first). The mean estimates the JSD and both lie in [0, 1]."""
    a = _points(realH, "realH")
    b = _points(synthH, "synthH")
    if a.shape[1] != b.shape[1]:
        raise EvalError(f"embedding widths differ: {a.shape[1]} vs {b.shape[1]}")
    pool = np.vstack([a, b])
    n = pool.shape[0]
    if not 1 <= k_nn < n:
        raise EvalError(f"k_nn={k_nn} out of range for a pool of {n} points")
    synth_label = np.zeros(n)
    synth_label[a.shape[0]:] = 1.0

    deltas = np.empty(n)
    chunk = max(1, (1 << 22) // n)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = accel.sq_dists(pool[start:stop], pool)
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf  # self
        nn = np.argpartition(d2, k_nn - 1, axis=1)[:, :k_nn]
        p_hat = synth_label[nn].mean(axis=1)
        deltas[start:stop] = 1.0 - _binary_entropy_bits(p_hat)
    np.clip(deltas, 0.0, 1.0, out=deltas)
    return float(deltas.mean()), deltas


# ------------------------------------------------------------------------ MDS


def mds_2d(points) -> np.ndarray:
    """Classical MDS to 2 dimensions: double-centered squared distances,
    top-2 eigenpairs by power iteration with deflation (residual tolerance
    1e-10 relative to the eigenvalue, max 10000 iterations)."""
    p = np.asarray(points, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 3:
        raise EvalError(f"MDS needs at least 3 points, got shape {p.shape}")
    n = p.shape[0]
    d2 = accel.sq_dists(p, p)
    b = -0.5 * (d2 - d2.mean(axis=1, keepdims=True) - d2.mean(axis=0, keepdims=True) + d2.mean())
    b = 0.5 * (b + b.T)  # keep symmetry against FP dust from the expansion

    coords = np.zeros((n, 2))
    start = Stream(0).child("mds_start")
    for c in range(2):
        v = start.normals(n)
        v /= np.linalg.norm(v)
        converged = False
        res = np.inf
        for _ in range(10000):
            w = b @ v
            lam = float(v @ w)
            res = float(np.linalg.norm(w - lam * v))
            if res <= 1e-10 * max(1.0, abs(lam)):
                converged = True
                break
            nw = float(np.linalg.norm(w))
            if nw == 0.0:  # v lies in the null space: eigenvalue 0
                lam, converged = 0.0, True
                break
            v = w / nw
        if not converged:
            raise EvalError(f"MDS power iteration did not converge (residual {res:.3e})")
        coords[:, c] = v * math.sqrt(max(lam, 0.0))
        b = b - lam * np.outer(v, v)
    return coords


# -------------------------------------------------------------- memorization


@dataclass(frozen=True)
class MemorizationReport:
    dist_train: np.ndarray
    dist_test: np.ndarray
    ks: TestResult
    wilcoxon: TestResult


def _nn_dists(queries: np.ndarray, refs: np.ndarray) -> np.ndarray:
    out = np.empty(queries.shape[0])
    chunk = max(1, (1 << 22) // refs.shape[0])
    for start in range(0, queries.shape[0], chunk):
        stop = min(start + chunk, queries.shape[0])
        out[start:stop] = accel.sq_dists(queries[start:stop], refs).min(axis=1)
    return np.sqrt(out)


def memorization_report(synthH, trainH, testH) -> MemorizationReport:
    """Per-synthetic-point NN distances to the train and test embeddings,
    compared by KS and by the one-sided Wilcoxon with alternative "closer
    to train" (paired differences dist_train - dist_test < 0). Identical
    reference sets yield no signal: Wilcoxon reports (0, 1)."""
    s = _points(synthH, "synthH")
    tr = _points(trainH, "trainH")
    te = _points(testH, "testH")
    if not s.shape[1] == tr.shape[1] == te.shape[1]:
        raise EvalError("embedding widths differ")
    dist_train = _nn_dists(s, tr)
    dist_test = _nn_dists(s, te)
    ks = ks_two_sample(dist_train, dist_test)
    try:
        wil = wilcoxon_one_sided(dist_train - dist_test)
    except LearnerError:  # every difference zero: nothing to reject
        wil = TestResult(0.0, 1.0)
    return MemorizationReport(dist_train, dist_test, ks, wil)


# ----------------------------------------------------------------- downstream


def _features_and_labels(d: Dataset, target: str):
    keep = [i for i, c in enumerate(d.schema) if c.name != target]
    schema = Schema(tuple(d.schema.columns[i] for i in keep))
    feats = Dataset(schema, [d.column_array(i) for i in keep], _validate=False)
    labels = d.codes(target)
    known = labels != -1
    if not known.all():
        feats = feats.take(np.nonzero(known)[0])
        labels = labels[known]
    return feats, labels


def downstream_cross_eval(real_train: Dataset, synth_train: Dataset,
                          real_test: Dataset, target: str, seed=0) -> tuple:
    """Accuracy of a forest predicting `target` on real_test when trained on
    real_train vs on synth_train (same forest seed for both)."""
    if not real_train.schema == synth_train.schema == real_test.schema:
        raise EvalError("datasets must share one schema")
    if target not in real_train.schema.names:
        raise EvalError(f"target column {target!r} missing from schema")
    if real_train.schema.col(target).is_numeric:
        raise EvalError(f"target column {target!r} must be categorical or binary")
    xr, yr = _features_and_labels(real_train, target)
    xs, ys = _features_and_labels(synth_train, target)
    xt, yt = _features_and_labels(real_test, target)
    base = int(seed)
    acc_real = accuracy(yt, rf_fit_predict(xr, yr, xt, trees=100, seed=base))
    acc_synth = accuracy(yt, rf_fit_predict(xs, ys, xt, trees=100, seed=base))
    return acc_real, acc_synth


# ---------------------------------------------------------------- full report


def _default_targets(schema: Schema) -> list:
    named = [n for n in ("BusinessLeisure", "Nationality") if n in schema.names]
    if named:
        return named
    return [c.name for c in schema if not c.is_numeric and not c.nullable][:2]


def _avg(values):
    if isinstance(values[0], dict):
        return {k: _avg([v[k] for v in values]) for k in values[0]}
    return float(np.mean([float(v) for v in values]))


def _single_run(real_train, real_test, model, s: Stream, targets, k_nn):
    synth_eval = gan.generate(model, len(real_test), s.child("gen_eval"))
    synth_train = gan.generate(model, len(real_train), s.child("gen_train"))

    univariate = univariate_report(real_test, synth_eval)
    two = {
        name: two_sample_score(real_test, synth_eval, name, s.child(f"ts_{name}"))
        for name in ("rf", "logreg")
    }

    cap = min(EMBED_CAP, len(real_test))
    take_r = s.child("cap_r").subsample(len(real_test), cap)
    take_s = s.child("cap_s").subsample(len(synth_eval), cap)
    real_h = critic_embed(real_test.take(take_r), model, s.child("embed_r"))
    synth_h = critic_embed(synth_eval.take(take_s), model, s.child("embed_s"))
    k_nn = min(k_nn, real_h.shape[0] + synth_h.shape[0] - 1)
    jsd, deltas = jsd_local(real_h, synth_h, k_nn=k_nn)

    side = min(MDS_CAP, cap)
    pool = np.vstack([real_h[:side], synth_h[:side]])
    coords = mds_2d(pool)
    mds_labels = np.repeat(np.array([0, 1]), side)
    mds_deltas = np.concatenate([deltas[:side], deltas[cap:cap + side]])

    q = min(EMBED_CAP, len(real_train), len(real_test))
    train_h = critic_embed(
        real_train.take(s.child("cap_t").subsample(len(real_train), q)),
        model,
        s.child("embed_t"),
    )
    mem = memorization_report(synth_h, train_h, real_h[:q])

    down = {}
    for tgt in targets:
        acc_real, acc_synth = downstream_cross_eval(
            real_train, synth_train, real_test, tgt,
            seed=int(s.child(f"down_{tgt}").raw(1)[0] >> 32),
        )
        down[tgt] = {"real": acc_real, "synth": acc_synth}

    scalars = {
        "two_sample": two,
        "jsd": {"estimate": jsd, "k_nn": k_nn},
        "memorization": {
            "ks": {"statistic": mem.ks.statistic, "p_value": mem.ks.p_value},
            "wilcoxon": {"statistic": mem.wilcoxon.statistic, "p_value": mem.wilcoxon.p_value},
            "points": q,
        },
        "downstream": down,
    }
    arrays = {
        "univariate": univariate,
        "coords": coords,
        "labels": mds_labels,
        "deltas": mds_deltas,
        "dist_train": mem.dist_train,
        "dist_test": mem.dist_test,
    }
    return scalars, arrays


def full_report(real_train: Dataset, real_test: Dataset, model: gan.GanModel,
                seed=0, runs: int = 1, out_dir=None, targets=None,
                k_nn: int = 50) -> dict:
    """Evaluates `model` against held-out data: |real_test| synthetic rows
    per run, every section above, numeric scores averaged over `runs`
    (arrays and sidecar CSVs come from the first run). Writes report.json,
    mds_coords.csv, and nn_distances.csv when out_dir is given. k_nn caps
    the local-discrepancy neighborhood (shrunk further on tiny pools)."""
    if len(real_train) == 0 or len(real_test) == 0:
        raise EvalError("real_train and real_test must be nonempty")
    if runs < 1:
        raise EvalError("runs must be >= 1")
    if k_nn < 1:
        raise EvalError("k_nn must be >= 1")
    if targets is None:
        targets = _default_targets(real_train.schema)

    root = Stream(seed)
    per_run = []
    first = None
    for r in range(runs):
        scalars, arrays = _single_run(real_train, real_test, model,
                                      root.child(f"run{r}"), targets, k_nn)
        per_run.append(scalars)
        if first is None:
            first = arrays

    avg = _avg(per_run)
    report = {
        "runs": runs,
        "univariate": first["univariate"],
        "two_sample": avg["two_sample"],
        "jsd": avg["jsd"],
        "mds": {"points_per_side": int(first["labels"].size // 2)},
        "memorization": avg["memorization"],
        "downstream": avg["downstream"],
    }

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8", newline="") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
        lines = ["x,y,label,delta"]
        for (x, y), lab, dl in zip(first["coords"], first["labels"], first["deltas"]):
            lines.append(f"{float(x)!r},{float(y)!r},{int(lab)},{float(dl)!r}")
        with open(os.path.join(out_dir, "mds_coords.csv"), "w", encoding="utf-8", newline="") as f:
            f.write("\n".join(lines) + "\n")
        lines = ["d_train,d_test"]
        for dt, de in zip(first["dist_train"], first["dist_test"]):
            lines.append(f"{float(dt)!r},{float(de)!r}")
        with open(os.path.join(out_dir, "nn_distances.csv"), "w", encoding="utf-8", newline="") as f:
            f.write("\n".join(lines) + "\n")
    return report
