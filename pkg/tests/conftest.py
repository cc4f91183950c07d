"""Shared builders for test fixtures: a small two-column mixture task used
by the training tests and the acceptance battery."""

import numpy as np

from pnrgan.data import ColumnSpec, Dataset, Schema
from pnrgan.rng import Stream

TOY_LEVEL_PROBS = (0.6, 0.3, 0.1)


def toy_schema() -> Schema:
    return Schema((
        ColumnSpec("Level", "categorical", levels=("A", "B", "C")),
        ColumnSpec("Value", "numerical", lo=0.0, hi=1.0),
    ))


def toy_dataset(n: int, seed) -> Dataset:
    """Level ~ (0.6, 0.3, 0.1); Value ~ even mixture of N(0.3, 0.06^2) and
    N(0.7, 0.06^2), clipped to [0,1]."""
    s = Stream(seed).child("toy")
    edges = np.cumsum(TOY_LEVEL_PROBS)[:-1]
    codes = np.searchsorted(edges, s.child("level").uniforms(n), side="right")
    centers = np.where(s.child("side").bernoulli(0.5, n), 0.7, 0.3)
    values = np.clip(centers + s.child("noise").normals(n, sigma=0.06), 0.0, 1.0)
    return Dataset(toy_schema(), [codes.astype(np.int64), values])
