"""Deterministic counter-based random streams.

Every stochastic operation in this package draws from a Stream built on the
splitmix64 finalizer: output i of a stream with key k is

    out_i = mix64(k + (i + 1) * GOLDEN)   (mod 2**64)

Because each output depends only on (key, index), a block of draws is plain
vectorized uint64 arithmetic, independent draws never share state, and the
bit stream is identical on every platform and numpy version.

The raw bit stream and the distribution transforms below are frozen; tests
pin exact output values, so any change here is a breaking change for every
recorded seed in the test suite.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_CHILD_SALT = np.uint64(0xA0761D6478BD642F)
_INV53 = float(2.0**-53)


def _mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, elementwise on uint64 arrays. Overflow is the
    intended mod-2**64 arithmetic."""
    with np.errstate(over="ignore"):
        x = x ^ (x >> np.uint64(30))
        x = x * np.uint64(0xBF58476D1CE4E5B9)
        x = x ^ (x >> np.uint64(27))
        x = x * np.uint64(0x94D049BB133111EB)
        return x ^ (x >> np.uint64(31))


def _tag64(tag) -> np.uint64:
    """Fold an int or str tag into a uint64 (FNV-1a for strings)."""
    if isinstance(tag, (int, np.integer)):
        return np.uint64(int(tag) & _MASK)
    if isinstance(tag, str):
        h = 0xCBF29CE484222325
        for b in tag.encode("utf-8"):
            h = ((h ^ b) * 0x100000001B3) & _MASK
        return np.uint64(h)
    raise TypeError(f"stream tag must be int or str, got {type(tag).__name__}")


class Stream:
    """A named position in the splitmix64 counter sequence.

    draw methods advance the counter by the number of raw 64-bit words they
    consume, so the same (seed, call sequence) always reproduces the same
    values. child() derives an unrelated stream from a tag, which keeps
    independent consumers (columns, trees, runs) decoupled from each other's
    draw counts.
    """

    __slots__ = ("_key", "_counter")

    def __init__(self, seed, counter: int = 0):
        if isinstance(seed, Stream):
            # adopt an existing stream's position (lets callers pass either)
            self._key = seed._key
            self._counter = seed._counter + int(counter)
            return
        if isinstance(seed, np.uint64):
            self._key = seed
        else:
            self._key = np.uint64(int(seed) & _MASK)
        self._counter = int(counter)

    @property
    def counter(self) -> int:
        return self._counter

    def child(self, tag) -> "Stream":
        with np.errstate(over="ignore"):
            key = _mix64(np.uint64([self._key ^ _mix64(np.uint64([_tag64(tag) + _CHILD_SALT]))[0]]))[0]
        return Stream(key)

    def raw(self, n: int) -> np.ndarray:
        """Next n raw 64-bit words."""
        if n < 0:
            raise ValueError("n must be nonnegative")
        # uint64 wraparound is the intended mod-2**64 arithmetic
        with np.errstate(over="ignore"):
            idx = np.arange(self._counter + 1, self._counter + 1 + n, dtype=np.uint64)
            out = _mix64(self._key + idx * _GOLDEN)
        self._counter += n
        return out

    def uniforms(self, n: int) -> np.ndarray:
        """n doubles in [0, 1), 53-bit resolution."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * _INV53

    def _uniforms_open(self, n: int) -> np.ndarray:
        """n doubles in (0, 1]; safe under log()."""
        return ((self.raw(n) >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * _INV53

    def normals(self, n: int, mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
        """Box-Muller, cosine branch only (2 words per normal)."""
        u1 = self._uniforms_open(n)
        u2 = self.uniforms(n)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return mu + sigma * z

    def exponentials(self, mean: float, n: int) -> np.ndarray:
        return -float(mean) * np.log(self._uniforms_open(n))

    def bernoulli(self, p: float, n: int) -> np.ndarray:
        return self.uniforms(n) < float(p)

    def integers(self, lo: int, hi: int, n: int) -> np.ndarray:
        """n ints uniform on [lo, hi). Span must fit comfortably in 53 bits."""
        if hi <= lo:
            raise ValueError(f"empty integer range [{lo}, {hi})")
        span = hi - lo
        if span > (1 << 53):
            raise ValueError("integer span exceeds 53-bit uniform resolution")
        return lo + np.floor(self.uniforms(n) * span).astype(np.int64)

    def poissons(self, lam, n: int) -> np.ndarray:
        """Inverse-CDF scan; suited to the small rates used here (lam <~ 50)."""
        lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,)).copy()
        if np.any(lam < 0):
            raise ValueError("poisson rate must be nonnegative")
        u = self.uniforms(n)
        k = np.zeros(n, dtype=np.int64)
        pmf = np.exp(-lam)
        cdf = pmf.copy()
        cap = int(np.max(lam, initial=0.0) + 12.0 * np.sqrt(np.max(lam, initial=0.0)) + 20.0)
        for _ in range(cap):
            todo = u >= cdf
            if not todo.any():
                break
            k[todo] += 1
            pmf[todo] *= lam[todo] / k[todo]
            cdf[todo] += pmf[todo]
        return k

    def binomials(self, trials: int, p: float, n: int) -> np.ndarray:
        """Inverse-CDF via the exact pmf table (trials is small here)."""
        if trials < 0 or not (0.0 <= p <= 1.0):
            raise ValueError("need trials >= 0 and p in [0, 1]")
        ks = np.arange(trials + 1)
        logfact = np.concatenate([[0.0], np.cumsum(np.log(np.arange(1, trials + 1)))])
        with np.errstate(divide="ignore", invalid="ignore"):
            logpmf = (
                logfact[trials]
                - logfact[ks]
                - logfact[trials - ks]
                + ks * np.log(p if p > 0 else 1.0)
                + (trials - ks) * np.log1p(-p if p < 1 else 0.0)
            )
        pmf = np.exp(logpmf)
        if p == 0.0:
            pmf = np.zeros(trials + 1)
            pmf[0] = 1.0
        elif p == 1.0:
            pmf = np.zeros(trials + 1)
            pmf[-1] = 1.0
        cdf = np.cumsum(pmf)
        cdf[-1] = 1.0
        return np.searchsorted(cdf, self.uniforms(n), side="right").astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Uniform permutation of range(n) via stable argsort of uniforms."""
        return np.argsort(self.uniforms(n), kind="stable")

    def subsample(self, n: int, k: int) -> np.ndarray:
        """k distinct indices out of range(n), in random order."""
        if k > n:
            raise ValueError(f"cannot take {k} distinct indices from {n}")
        return self.permutation(n)[:k]

    def __repr__(self) -> str:
        return f"Stream(key=0x{int(self._key):016x}, counter={self._counter})"
