"""Times the hot kernels on the numpy and numba backends.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--n 4000] [--repeats 5]

Each kernel is checked for cross-backend agreement before timing (bitwise
for the split/routing kernels, allclose for distances). The first numba call
per kernel pays JIT compilation; a warmup pass absorbs it.
"""

import argparse
import time

import numpy as np

from pnrgan import accel, learners
from pnrgan.data import ColumnSpec, Dataset, Schema
from pnrgan.rng import Stream


def _time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _bench(name, make_fn, check, repeats):
    rows = {}
    for backend in ("numpy", "numba"):
        if backend == "numba" and not accel._HAVE_NUMBA:
            continue
        accel.set_backend(backend)
        fn = make_fn()
        fn()  # warmup (JIT compile + cache touch)
        rows[backend] = (fn(), _time(fn, repeats))
    if "numba" in rows:
        check(rows["numpy"][0], rows["numba"][0])
        speedup = rows["numpy"][1] / rows["numba"][1]
    else:
        speedup = float("nan")
    for backend, (_, secs) in rows.items():
        print(f"{name:28s} {backend:6s} {secs * 1e3:10.3f} ms")
    print(f"{name:28s} {'ratio':6s} {speedup:10.2f} x")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=4000, help="rows per benchmark input")
    ap.add_argument("--repeats", type=int, default=5, help="timed repetitions (best is kept)")
    args = ap.parse_args()

    s = Stream(2024)
    n = args.n
    a = s.child("a").uniforms(n * 16).reshape(n, 16)
    b = s.child("b").uniforms(n * 16).reshape(n, 16)
    values = np.floor(s.child("v").uniforms(n) * 64.0) / 32.0
    labels = s.child("y").integers(0, 2, n)
    codes = s.child("c").integers(-1, 19, n)

    bitwise = lambda x, y: np.testing.assert_array_equal(np.asarray(x), np.asarray(y))
    close = lambda x, y: np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)

    _bench("sq_dists", lambda: (lambda: accel.sq_dists(a, b)), close, args.repeats)
    _bench(
        "gini_numeric",
        lambda: (lambda: accel.gini_numeric(values, labels, 2)),
        bitwise,
        args.repeats,
    )
    _bench(
        "gini_onevsrest",
        lambda: (lambda: accel.gini_onevsrest(codes, labels, 19, 2)),
        bitwise,
        args.repeats,
    )

    schema = Schema((
        ColumnSpec("u", "numerical", lo=0.0, hi=1.0),
        ColumnSpec("c", "categorical", levels=tuple(chr(65 + i) for i in range(19))),
    ))
    u = s.child("u").uniforms(n)
    y = ((u > 0.5) ^ (codes == 2)).astype(np.int64)
    train = Dataset(schema, [u, np.maximum(codes, 0)])

    def make_forest():
        return lambda: learners.rf_predict(
            learners.rf_fit(train, y, trees=10, seed=1), train
        )

    _bench("forest fit+predict", make_forest, bitwise, max(1, args.repeats // 2))


if __name__ == "__main__":
    main()
