"""Encoding between Datasets and the [0,1] matrices the networks consume.

Two codecs share the same fitted plan:

* the one-hot path: numerics min-max scaled to [0,1], categoricals one-hot
  with an UNK level standing in for Missing, missing numerics filled with a
  random value from the same column plus a width-2 "was it filled" indicator
  block;
* the band path: every categorical (and indicator) block collapses to one
  real column by sampling a Normal centered on the level's frequency-
  proportional interval of [0,1] (sigma = width/6), decoded by interval
  containment.

Unit scaling is endpoint-exact and ulp-corrected so decode(encode(d))
restores non-missing cells bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .data import Dataset, Schema, parse_schema_line, schema_to_lines
from .rng import Stream

UNK = "UNK"
NUMERIC = "numeric"
ONEHOT = "onehot"
INDICATOR = "indicator"
INDICATOR_LEVELS = ("not-filled", "filled")


class EncodingError(ValueError):
    """Encoding plan or matrix violated its contract."""


@dataclass(frozen=True)
class Block:
    """One contiguous group of encoded columns derived from a source column."""

    source: str
    kind: str  # numeric | onehot | indicator
    levels: tuple = ()
    lo: float = 0.0
    hi: float = 0.0
    start: int = 0
    width: int = 1

    @property
    def stop(self) -> int:
        return self.start + self.width


@dataclass(frozen=True)
class EncodingPlan:
    schema: Schema
    blocks: tuple

    @property
    def width(self) -> int:
        return sum(b.width for b in self.blocks)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def block(self, source: str, kind: str) -> Block:
        for b in self.blocks:
            if b.source == source and b.kind == kind:
                return b
        raise KeyError((source, kind))


@dataclass(frozen=True)
class EncodedMatrix:
    """n x d real matrix plus the layout describing its columns. form is
    "onehot" (full plan layout) or "band" (one column per block)."""

    values: np.ndarray
    layout: tuple
    form: str = ONEHOT

    def __post_init__(self):
        # encode() emits longdouble so numeric cells stay invertible; keep
        # that dtype, normalize everything else to float64
        dtype = _LD if np.asarray(self.values).dtype == _LD else np.float64
        v = np.asarray(self.values, dtype=dtype)
        object.__setattr__(self, "values", v)
        width = sum(b.width for b in self.layout) if self.form == ONEHOT else len(self.layout)
        if v.ndim != 2 or v.shape[1] != width:
            raise EncodingError(f"matrix has {v.shape} columns, layout expects {width}")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def check(self, soft: bool = False, atol: float = 1e-9) -> None:
        """Assert the range/one-hot invariants (hard data or soft samples)."""
        v = self.values
        if np.isnan(v).any():
            raise EncodingError("NaN entries in encoded matrix")
        if v.min(initial=0.0) < -atol or v.max(initial=0.0) > 1.0 + atol:
            raise EncodingError("entries outside [0,1]")
        if self.form != ONEHOT:
            return
        for b in self.layout:
            if b.kind == NUMERIC:
                continue
            block = v[:, b.start:b.stop]
            sums = block.sum(axis=1)
            if np.abs(sums - 1.0).max(initial=0.0) > atol:
                raise EncodingError(f"block {b.source!r}/{b.kind} rows do not sum to 1")
            if not soft:
                if not np.isin(block, (0.0, 1.0)).all():
                    raise EncodingError(f"block {b.source!r}/{b.kind} is not hard one-hot")


# ------------------------------------------------------------------ fitting


def fit_plan(train: Dataset) -> EncodingPlan:
    """Observed numeric bounds, schema-ordered levels with UNK appended for
    nullable categoricals, and an indicator block per nullable numeric."""
    if len(train) == 0:
        raise EncodingError("cannot fit a plan on an empty Dataset")
    blocks = []
    start = 0
    for i, spec in enumerate(train.schema):
        if spec.is_numeric:
            col = train.column_array(i)
            obs = col[~np.isnan(col)]
            if np.unique(obs).size < 2:
                raise EncodingError(
                    f"column {spec.name!r}: needs >= 2 distinct non-missing values to scale"
                )
            blocks.append(Block(spec.name, NUMERIC, lo=float(obs.min()), hi=float(obs.max()),
                                start=start, width=1))
            start += 1
            if spec.nullable:
                blocks.append(Block(spec.name, INDICATOR, levels=INDICATOR_LEVELS,
                                    start=start, width=2))
                start += 2
        else:
            levels = spec.levels
            if spec.nullable:
                if UNK in levels:
                    raise EncodingError(f"column {spec.name!r}: level {UNK!r} is reserved")
                levels = levels + (UNK,)
            blocks.append(Block(spec.name, ONEHOT, levels=levels, start=start, width=len(levels)))
            start += len(levels)
    return EncodingPlan(train.schema, tuple(blocks))


# ------------------------------------------------------- exact unit scaling
#
# A float64 scaled value cannot round-trip every float64 cell: near the top
# of a binade, ulp(u) * span exceeds ulp(v) and the decode grid skips values
# (e.g. no 53-bit u satisfies fl(u * 303) == 98.0). Encoded matrices
# therefore carry longdouble entries; the extra mantissa bits make
# decode(encode(v)) == v bit-exact, while consumers that train on the matrix
# just cast to float64. On platforms where longdouble is float64 the ulp
# nudge below still repairs all but the skipped cells.

_LD = np.longdouble


def _unit_unscale(u: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Inverse of unit scaling with exact endpoints; clips u into [0,1];
    evaluates in extended precision and rounds to float64 once."""
    u = np.asarray(u, dtype=_LD)
    v = (_LD(lo) + u * (_LD(hi) - _LD(lo))).astype(np.float64)
    return np.where(u <= 0.0, lo, np.where(u >= 1.0, hi, v))


def _unit_scale(v: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """(v-lo)/(hi-lo) in extended precision, clipped to [0,1], endpoints
    exact, ulp-nudged until _unit_unscale returns in-range v bit-exactly."""
    v = np.asarray(v, dtype=np.float64)
    span = _LD(hi) - _LD(lo)
    u = np.clip((v.astype(_LD) - _LD(lo)) / span, _LD(0.0), _LD(1.0))
    u[v == lo] = 0.0
    u[v == hi] = 1.0
    dec = _unit_unscale(u, lo, hi)
    fixable = (dec != v) & (v >= lo) & (v <= hi)
    one = _LD(1.0)
    for i in np.nonzero(fixable)[0]:
        target = v[i]
        best_u, best_err = u[i], abs(dec[i] - target)
        for direction in (_LD(2.0), _LD(-1.0)):
            cand = u[i]
            for _ in range(8):
                cand = min(max(np.nextafter(cand, direction), _LD(0.0)), one)
                got = float(_unit_unscale(np.array([cand]), lo, hi)[0])
                err = abs(got - target)
                if err < best_err:
                    best_u, best_err = cand, err
                if got == target or err > best_err:
                    break
            if best_err == 0.0:
                break
        u[i] = best_u
    return u


# ----------------------------------------------------------- one-hot codec


def _numeric_filled(d: Dataset, spec_idx: int, block: Block, stream: Stream):
    """Column with Missing replaced by uniform draws from its own non-missing
    pool; returns (filled values, missing mask)."""
    col = d.column_array(spec_idx)
    miss = np.isnan(col)
    if miss.any():
        pool = col[~miss]
        if pool.size == 0:
            raise EncodingError(f"column {block.source!r}: all values Missing, nothing to fill from")
        s = stream.child("fill:" + block.source)
        col[miss] = pool[s.integers(0, pool.size, int(miss.sum()))]
    return col, miss


def _categorical_codes(d: Dataset, spec_idx: int, block: Block) -> np.ndarray:
    spec = d.schema.columns[spec_idx]
    codes = d.column_array(spec_idx)
    miss = codes == -1
    if miss.any():
        if block.levels[-1] != UNK:
            raise EncodingError(
                f"column {block.source!r}: Missing not representable (no {UNK!r} level)"
            )
        codes[miss] = len(block.levels) - 1
    # non-UNK codes index schema levels, which prefix the block levels
    assert block.levels[: len(spec.levels)] == spec.levels
    return codes


def encode(d: Dataset, plan: EncodingPlan, seed) -> EncodedMatrix:
    """Dataset -> hard one-hot matrix in [0,1]. seed drives the missing-value
    fills (drawn with replacement from the dataset being encoded)."""
    if d.schema != plan.schema:
        raise EncodingError("dataset schema does not match plan schema")
    s = Stream(seed).child("encode")
    n = len(d)
    out = np.zeros((n, plan.width), dtype=_LD)
    rows = np.arange(n)
    for b in plan.blocks:
        i = plan.schema.index(b.source)
        if b.kind == NUMERIC:
            col, _ = _numeric_filled(d, i, b, s)
            out[:, b.start] = _unit_scale(col, b.lo, b.hi)
        elif b.kind == INDICATOR:
            miss = np.isnan(d.column_array(i))
            out[rows, b.start + miss.astype(np.int64)] = 1.0
        else:
            codes = _categorical_codes(d, i, b)
            out[rows, b.start + codes] = 1.0
    return EncodedMatrix(out, plan.blocks, ONEHOT)


def decode(m: EncodedMatrix, plan: EncodingPlan) -> Dataset:
    """Matrix -> Dataset: numerics unscaled, categorical blocks by argmax
    (ties to the lowest index), UNK and "filled" argmaxes become Missing."""
    v = m.values
    if np.isnan(v).any():
        raise EncodingError("NaN entries in encoded matrix")
    schema = plan.schema
    cols = {}
    filled = {}
    for b in plan.blocks:
        if b.kind == NUMERIC:
            cols[b.source] = np.asarray(_unit_unscale(v[:, b.start], b.lo, b.hi))
        elif b.kind == INDICATOR:
            filled[b.source] = np.argmax(v[:, b.start:b.stop], axis=1) == 1
        else:
            spec = schema.col(b.source)
            codes = np.argmax(v[:, b.start:b.stop], axis=1)
            if b.levels[-1] == UNK and len(b.levels) == len(spec.levels) + 1:
                codes = np.where(codes == len(b.levels) - 1, -1, codes)
            cols[b.source] = codes
    for source, was_filled in filled.items():
        cols[source] = np.where(was_filled, np.nan, cols[source])
    return Dataset(schema, [cols[c.name] for c in schema])


# --------------------------------------------------------------- band codec


@dataclass(frozen=True)
class BandEntry:
    """Interval partition of [0,1] for one categorical/indicator block:
    levels sorted by descending training proportion, cumulative edges,
    and the implied Normal parameters (midpoint, width/6)."""

    source: str
    kind: str
    levels: tuple  # sorted by descending proportion
    edges: tuple   # len(levels)+1, edges[0]=0.0, edges[-1]=1.0

    @property
    def midpoints(self) -> np.ndarray:
        e = np.asarray(self.edges)
        return 0.5 * (e[:-1] + e[1:])

    @property
    def sigmas(self) -> np.ndarray:
        e = np.asarray(self.edges)
        return (e[1:] - e[:-1]) / 6.0

    @property
    def widths(self) -> np.ndarray:
        e = np.asarray(self.edges)
        return e[1:] - e[:-1]


@dataclass(frozen=True)
class BandCodec:
    entries: tuple

    def entry(self, source: str, kind: str) -> BandEntry:
        for e in self.entries:
            if e.source == source and e.kind == kind:
                return e
        raise KeyError((source, kind))


def band_layout(plan: EncodingPlan) -> tuple:
    """One width-1 column per plan block, in plan order."""
    out = []
    for i, b in enumerate(plan.blocks):
        out.append(replace(b, start=i, width=1))
    return tuple(out)


def fit_band_codec(train: Dataset, plan: EncodingPlan) -> BandCodec:
    """Frequency-proportional interval partition per non-numeric block.
    Missing cells count toward UNK (categoricals) or "filled" (indicators);
    proportion ties keep plan level order."""
    if len(train) == 0:
        raise EncodingError("cannot fit a band codec on an empty Dataset")
    if train.schema != plan.schema:
        raise EncodingError("dataset schema does not match plan schema")
    n = len(train)
    entries = []
    for b in plan.blocks:
        i = plan.schema.index(b.source)
        if b.kind == NUMERIC:
            continue
        if b.kind == INDICATOR:
            miss = int(np.isnan(train.column_array(i)).sum())
            counts = np.array([n - miss, miss], dtype=np.int64)
        else:
            codes = _categorical_codes(train, i, b)
            counts = np.bincount(codes, minlength=len(b.levels))
        order = np.argsort(-counts, kind="stable")
        widths = counts[order] / float(n)
        edges = np.concatenate([[0.0], np.cumsum(widths)])
        edges[-1] = 1.0
        entries.append(BandEntry(
            b.source, b.kind,
            tuple(b.levels[int(j)] for j in order),
            tuple(float(e) for e in edges),
        ))
    return BandCodec(tuple(entries))


def band_encode(d: Dataset, codec: BandCodec, plan: EncodingPlan, seed) -> EncodedMatrix:
    """Dataset -> one real column per block: numerics scaled as in encode,
    categorical cells sampled from Normal(interval midpoint, (width/6)^2),
    clipped to [0,1] globally (not per interval)."""
    if d.schema != plan.schema:
        raise EncodingError("dataset schema does not match plan schema")
    s = Stream(seed).child("band_encode")
    n = len(d)
    layout = band_layout(plan)
    out = np.zeros((n, len(layout)), dtype=_LD)
    for j, b in enumerate(plan.blocks):
        i = plan.schema.index(b.source)
        if b.kind == NUMERIC:
            col, _ = _numeric_filled(d, i, b, s)
            out[:, j] = _unit_scale(col, b.lo, b.hi)
            continue
        if b.kind == INDICATOR:
            idx = np.isnan(d.column_array(i)).astype(np.int64)
        else:
            codes = _categorical_codes(d, i, b)
            idx = codes
        entry = codec.entry(b.source, b.kind)
        pos = np.empty(len(entry.levels), dtype=np.int64)
        for p, lev in enumerate(entry.levels):
            pos[b.levels.index(lev)] = p
        p = pos[idx]
        z = s.child("band:" + b.source + ":" + b.kind).normals(n)
        out[:, j] = np.clip(entry.midpoints[p] + entry.sigmas[p] * z, 0.0, 1.0)
    return EncodedMatrix(out, layout, "band")


def band_decode(m: EncodedMatrix, codec: BandCodec, plan: EncodingPlan) -> Dataset:
    """Inverse of band_encode by interval containment: right-open intervals,
    last interval closed; UNK / "filled" map back to Missing."""
    v = m.values
    if np.isnan(v).any():
        raise EncodingError("NaN entries in encoded matrix")
    if v.shape[1] != plan.n_blocks:
        raise EncodingError(f"expected {plan.n_blocks} band columns, got {v.shape[1]}")
    schema = plan.schema
    cols = {}
    filled = {}
    for j, b in enumerate(plan.blocks):
        u = v[:, j]
        if b.kind == NUMERIC:
            cols[b.source] = np.asarray(_unit_unscale(u, b.lo, b.hi))
            continue
        entry = codec.entry(b.source, b.kind)
        edges = np.asarray(entry.edges)
        idx = np.searchsorted(edges, np.clip(u, 0.0, 1.0), side="right") - 1
        # u = 1.0 exactly (from clipping) belongs to the last nonzero interval
        last_nz = int(np.nonzero(entry.widths > 0)[0][-1])
        idx = np.minimum(idx, last_nz)
        if b.kind == INDICATOR:
            filled[b.source] = np.array([entry.levels[k] for k in idx]) == INDICATOR_LEVELS[1]
        else:
            spec = schema.col(b.source)
            lut = {lev: k for k, lev in enumerate(spec.levels)}
            lut[UNK] = -1
            cols[b.source] = np.array([lut[entry.levels[k]] for k in idx], dtype=np.int64)
    for source, was_filled in filled.items():
        cols[source] = np.where(was_filled, np.nan, cols[source])
    return Dataset(schema, [cols[c.name] for c in schema])


# ------------------------------------------------------------ serialization


def _fmt(x: float) -> str:
    return repr(float(x))


def save_plan(plan: EncodingPlan, path) -> None:
    """Self-contained plain-text plan: schema lines then one block per line."""
    lines = schema_to_lines(plan.schema)
    for b in plan.blocks:
        if b.kind == NUMERIC:
            lines.append(f"block={b.source};kind={NUMERIC};min={_fmt(b.lo)};max={_fmt(b.hi)}")
        elif b.kind == INDICATOR:
            lines.append(f"block={b.source};kind={INDICATOR}")
        else:
            lines.append(f"block={b.source};kind={ONEHOT};levels=" + "|".join(b.levels))
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("\n".join(lines) + "\n")


def load_plan(path) -> EncodingPlan:
    with open(path, "r", encoding="utf-8") as f:
        lines = [l for l in f.read().split("\n") if l.strip()]
    schema_lines = [l for l in lines if l.startswith("column=")]
    block_lines = [l for l in lines if l.startswith("block=")]
    if not schema_lines or not block_lines:
        raise EncodingError(f"{path}: not a plan file (needs column= and block= lines)")
    schema = Schema(tuple(
        parse_schema_line(l, f"{path}, line {i + 1}") for i, l in enumerate(schema_lines)
    ))
    blocks = []
    start = 0
    for l in block_lines:
        fields = dict(part.partition("=")[::2] for part in l.split(";"))
        source, kind = fields.get("block", ""), fields.get("kind", "")
        try:
            if kind == NUMERIC:
                b = Block(source, NUMERIC, lo=float(fields["min"]), hi=float(fields["max"]),
                          start=start, width=1)
            elif kind == INDICATOR:
                b = Block(source, INDICATOR, levels=INDICATOR_LEVELS, start=start, width=2)
            elif kind == ONEHOT:
                levels = tuple(fields["levels"].split("|"))
                b = Block(source, ONEHOT, levels=levels, start=start, width=len(levels))
            else:
                raise KeyError("kind")
        except (KeyError, ValueError):
            raise EncodingError(f"{path}: malformed block line {l!r}") from None
        blocks.append(b)
        start += b.width
    plan = EncodingPlan(schema, tuple(blocks))
    _check_plan_consistency(plan)
    return plan


def _check_plan_consistency(plan: EncodingPlan) -> None:
    for b in plan.blocks:
        spec = plan.schema.col(b.source)  # raises KeyError on unknown source
        if b.kind == ONEHOT:
            base = b.levels[:-1] if (spec.nullable and b.levels[-1:] == (UNK,)) else b.levels
            if base != spec.levels:
                raise EncodingError(f"block {b.source!r}: levels disagree with schema")
        elif b.kind == NUMERIC and not (b.lo < b.hi):
            raise EncodingError(f"block {b.source!r}: degenerate bounds")


def save_band_codec(codec: BandCodec, path) -> None:
    lines = []
    for e in codec.entries:
        lines.append(
            f"band={e.source};kind={e.kind};levels=" + "|".join(e.levels)
            + ";edges=" + ":".join(_fmt(x) for x in e.edges)
        )
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("\n".join(lines) + "\n")


def load_band_codec(path) -> BandCodec:
    with open(path, "r", encoding="utf-8") as f:
        lines = [l for l in f.read().split("\n") if l.strip()]
    entries = []
    for l in lines:
        fields = dict(part.partition("=")[::2] for part in l.split(";"))
        try:
            levels = tuple(fields["levels"].split("|"))
            edges = tuple(float(x) for x in fields["edges"].split(":"))
        except (KeyError, ValueError):
            raise EncodingError(f"{path}: malformed band line {l!r}") from None
        if len(edges) != len(levels) + 1 or edges[0] != 0.0 or edges[-1] != 1.0:
            raise EncodingError(f"{path}: inconsistent edges in {l!r}")
        entries.append(BandEntry(fields.get("band", ""), fields.get("kind", ""), levels, edges))
    return BandCodec(tuple(entries))
