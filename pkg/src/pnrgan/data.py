"""Schemas, datasets, file ingestion, and the surrogate PNR generator.

Datasets are columnar under the hood: numeric columns are float64 with NaN
for Missing, categorical/binary columns are int64 level codes with -1 for
Missing. All operations are pure functions over immutable inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .rng import Stream

NUMERICAL = "numerical"
CATEGORICAL = "categorical"
BINARY = "binary"

_FORBIDDEN_CHARS = set(",;|=\n")


class SchemaError(ValueError):
    """Schema construction or sidecar parsing violated the schema contract."""


class DataError(ValueError):
    """A data value violated its column contract (reported with location)."""


@dataclass(frozen=True)
class ColumnSpec:
    """One column: numeric with an inclusive range, or categorical/binary
    with an ordered level list. segment maps the column to a message
    segment tag and element position."""

    name: str
    kind: str
    lo: float = 0.0
    hi: float = 0.0
    levels: tuple = ()
    nullable: bool = False
    segment: Optional[tuple] = None  # (TAG, element_index)

    def __post_init__(self):
        if not self.name or _FORBIDDEN_CHARS & set(self.name):
            raise SchemaError(f"invalid column name {self.name!r}")
        if self.kind not in (NUMERICAL, CATEGORICAL, BINARY):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == NUMERICAL:
            if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
                raise SchemaError(f"column {self.name!r}: need finite lo < hi, got [{self.lo}, {self.hi}]")
            if self.levels:
                raise SchemaError(f"column {self.name!r}: numerical column cannot declare levels")
        else:
            need = 2 if self.kind == BINARY else None
            lv = tuple(self.levels)
            if len(set(lv)) != len(lv):
                raise SchemaError(f"column {self.name!r}: duplicate levels")
            if need is not None and len(lv) != need:
                raise SchemaError(f"column {self.name!r}: binary needs exactly 2 levels")
            if need is None and len(lv) < 2:
                raise SchemaError(f"column {self.name!r}: categorical needs >= 2 levels")
            for l in lv:
                if not l or _FORBIDDEN_CHARS & set(l):
                    raise SchemaError(f"column {self.name!r}: invalid level {l!r}")
            object.__setattr__(self, "levels", lv)
        if self.segment is not None:
            tag, idx = self.segment
            if not tag or set(tag) & (_FORBIDDEN_CHARS | {"+", "'", ":"}):
                raise SchemaError(f"column {self.name!r}: invalid segment tag {tag!r}")
            if int(idx) < 0:
                raise SchemaError(f"column {self.name!r}: negative segment element index")
            object.__setattr__(self, "segment", (tag, int(idx)))

    @property
    def is_numeric(self) -> bool:
        return self.kind == NUMERICAL


@dataclass(frozen=True)
class Schema:
    columns: tuple

    def __post_init__(self):
        cols = tuple(self.columns)
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        object.__setattr__(self, "columns", cols)

    def __iter__(self) -> Iterator[ColumnSpec]:
        return iter(self.columns)

    def __len__(self) -> int:
        return len(self.columns)

    @property
    def names(self) -> tuple:
        return tuple(c.name for c in self.columns)

    def index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise KeyError(name)

    def col(self, name: str) -> ColumnSpec:
        return self.columns[self.index(name)]


def _check_numeric_cell(spec: ColumnSpec, value, where: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise DataError(f"{where}: unparseable numeric value {value!r}") from None
    if not math.isfinite(v):
        raise DataError(f"{where}: non-finite numeric value {value!r}")
    if not (spec.lo <= v <= spec.hi):
        raise DataError(f"{where}: value {v} outside range [{spec.lo}, {spec.hi}]")
    return v


class Dataset:
    """Immutable table of typed cells conforming to a Schema."""

    __slots__ = ("schema", "_cols", "_n")

    def __init__(self, schema: Schema, columns: Sequence[np.ndarray], _validate: bool = True):
        if len(columns) != len(schema):
            raise DataError(f"expected {len(schema)} columns, got {len(columns)}")
        cols = []
        n = int(columns[0].shape[0]) if len(schema) else 0
        for spec, arr in zip(schema, columns):
            a = np.asarray(arr)
            if a.ndim != 1 or a.shape[0] != n:
                raise DataError(f"column {spec.name!r}: ragged column lengths")
            a = a.astype(np.float64 if spec.is_numeric else np.int64, copy=True)
            a.flags.writeable = False
            cols.append(a)
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "_cols", tuple(cols))
        object.__setattr__(self, "_n", n)
        if _validate:
            self._validate()

    def __setattr__(self, *a):  # immutable
        raise AttributeError("Dataset is immutable")

    def _validate(self) -> None:
        for spec, a in zip(self.schema, self._cols):
            if spec.is_numeric:
                miss = np.isnan(a)
                if miss.any() and not spec.nullable:
                    i = int(np.nonzero(miss)[0][0])
                    raise DataError(f"row {i}, column {spec.name!r}: Missing in non-nullable column")
                ok = miss | ((a >= spec.lo) & (a <= spec.hi))
                if not ok.all():
                    i = int(np.nonzero(~ok)[0][0])
                    raise DataError(
                        f"row {i}, column {spec.name!r}: value {a[i]} outside range [{spec.lo}, {spec.hi}]"
                    )
            else:
                miss = a == -1
                if miss.any() and not spec.nullable:
                    i = int(np.nonzero(miss)[0][0])
                    raise DataError(f"row {i}, column {spec.name!r}: Missing in non-nullable column")
                ok = miss | ((a >= 0) & (a < len(spec.levels)))
                if not ok.all():
                    i = int(np.nonzero(~ok)[0][0])
                    raise DataError(f"row {i}, column {spec.name!r}: level code {a[i]} out of range")

    @classmethod
    def from_rows(cls, schema: Schema, rows: Iterable[Sequence]) -> "Dataset":
        """Build from cell tuples; cells are reals, level strings, or None."""
        rows = list(rows)
        n = len(rows)
        cols = [
            np.full(n, np.nan) if c.is_numeric else np.full(n, -1, dtype=np.int64) for c in schema
        ]
        lookup = [
            None if c.is_numeric else {l: i for i, l in enumerate(c.levels)} for c in schema
        ]
        for i, row in enumerate(rows):
            if len(row) != len(schema):
                raise DataError(f"row {i}: expected {len(schema)} cells, got {len(row)}")
            for j, (spec, cell) in enumerate(zip(schema, row)):
                if cell is None:
                    continue
                if spec.is_numeric:
                    cols[j][i] = _check_numeric_cell(spec, cell, f"row {i}, column {spec.name!r}")
                else:
                    code = lookup[j].get(cell)
                    if code is None:
                        raise DataError(
                            f"row {i}, column {spec.name!r}: unknown category level {cell!r}"
                        )
                    cols[j][i] = code
        return cls(schema, cols)

    @property
    def n_rows(self) -> int:
        return self._n

    def __len__(self) -> int:
        return self._n

    def numeric(self, name: str) -> np.ndarray:
        spec = self.schema.col(name)
        if not spec.is_numeric:
            raise DataError(f"column {name!r} is not numeric")
        return self._cols[self.schema.index(name)].copy()

    def codes(self, name: str) -> np.ndarray:
        spec = self.schema.col(name)
        if spec.is_numeric:
            raise DataError(f"column {name!r} is not categorical")
        return self._cols[self.schema.index(name)].copy()

    def column_array(self, i: int) -> np.ndarray:
        return self._cols[i].copy()

    def rows(self) -> Iterator[tuple]:
        for i in range(self._n):
            out = []
            for spec, a in zip(self.schema, self._cols):
                if spec.is_numeric:
                    v = a[i]
                    out.append(None if np.isnan(v) else float(v))
                else:
                    c = int(a[i])
                    out.append(None if c == -1 else spec.levels[c])
            yield tuple(out)

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.schema, [a[idx] for a in self._cols], _validate=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset) or self.schema != other.schema or self._n != other._n:
            return False
        return all(
            np.array_equal(a, b, equal_nan=spec.is_numeric)
            for spec, a, b in zip(self.schema, self._cols, other._cols)
        )

    def __repr__(self) -> str:
        return f"Dataset({self._n} rows x {len(self.schema)} columns)"


# ----------------------------------------------------------------- CSV files


def _format_cell(spec: ColumnSpec, a: np.ndarray, i: int) -> str:
    if spec.is_numeric:
        v = a[i]
        if np.isnan(v):
            return ""
        v = float(v)
        if v.is_integer() and abs(v) < 1e16:
            return str(int(v))
        return repr(v)
    c = int(a[i])
    return "" if c == -1 else spec.levels[c]


def write_csv(dataset: Dataset, path) -> None:
    """Comma-separated, no quoting, \\n line ends, empty field = Missing.
    Numeric cells use the shortest decimal that parses back exactly."""
    lines = [",".join(dataset.schema.names)]
    cols = [dataset._cols[i] for i in range(len(dataset.schema))]
    for i in range(len(dataset)):
        lines.append(",".join(_format_cell(s, a, i) for s, a in zip(dataset.schema, cols)))
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("\n".join(lines) + "\n")


def load_csv(path, schema: Schema) -> Dataset:
    with open(path, "r", encoding="utf-8", newline="") as f:
        text = f.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DataError(f"{path}: empty file, expected a header row")
    header = tuple(lines[0].split(","))
    if header != schema.names:
        raise DataError(f"{path}: header {header} does not match schema columns {schema.names}")
    n = len(lines) - 1
    cols = [
        np.full(n, np.nan) if c.is_numeric else np.full(n, -1, dtype=np.int64) for c in schema
    ]
    lookup = [None if c.is_numeric else {l: k for k, l in enumerate(c.levels)} for c in schema]
    for i, line in enumerate(lines[1:]):
        fields = line.split(",")
        if len(fields) != len(schema):
            raise DataError(f"row {i}: expected {len(schema)} fields, got {len(fields)}")
        for j, (spec, field) in enumerate(zip(schema, fields)):
            if field == "":
                if not spec.nullable:
                    raise DataError(f"row {i}, column {spec.name!r}: Missing in non-nullable column")
                continue
            if spec.is_numeric:
                cols[j][i] = _check_numeric_cell(spec, field, f"row {i}, column {spec.name!r}")
            else:
                code = lookup[j].get(field)
                if code is None:
                    raise DataError(f"row {i}, column {spec.name!r}: unknown category level {field!r}")
                cols[j][i] = code
    return Dataset(schema, cols)


# ------------------------------------------------------------ schema sidecar


def schema_to_lines(schema: Schema) -> list:
    lines = []
    for c in schema:
        parts = [f"column={c.name}", f"kind={c.kind}"]
        if c.is_numeric:
            parts.append(f"range={c.lo!r}:{c.hi!r}")
        else:
            parts.append("levels=" + "|".join(c.levels))
        parts.append(f"nullable={1 if c.nullable else 0}")
        if c.segment is not None:
            parts.append(f"segment={c.segment[0]}:{c.segment[1]}")
        lines.append(";".join(parts))
    return lines


def save_schema(schema: Schema, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("\n".join(schema_to_lines(schema)) + "\n")


def parse_schema_line(line: str, where: str = "") -> ColumnSpec:
    fields = {}
    for part in line.split(";"):
        if "=" not in part:
            raise SchemaError(f"{where}: malformed field {part!r}")
        k, _, v = part.partition("=")
        if k in fields:
            raise SchemaError(f"{where}: duplicate key {k!r}")
        fields[k] = v
    for req in ("column", "kind", "nullable"):
        if req not in fields:
            raise SchemaError(f"{where}: missing key {req!r}")
    kind = fields["kind"]
    kwargs = dict(name=fields["column"], kind=kind, nullable=fields["nullable"] == "1")
    if fields["nullable"] not in ("0", "1"):
        raise SchemaError(f"{where}: nullable must be 0 or 1")
    if kind == NUMERICAL:
        if "range" not in fields:
            raise SchemaError(f"{where}: numerical column needs range=lo:hi")
        lo, sep, hi = fields["range"].partition(":")
        if not sep:
            raise SchemaError(f"{where}: malformed range {fields['range']!r}")
        try:
            kwargs["lo"], kwargs["hi"] = float(lo), float(hi)
        except ValueError:
            raise SchemaError(f"{where}: malformed range {fields['range']!r}") from None
    else:
        if "levels" not in fields:
            raise SchemaError(f"{where}: {kind} column needs levels=...")
        kwargs["levels"] = tuple(fields["levels"].split("|"))
    if "segment" in fields:
        tag, sep, idx = fields["segment"].partition(":")
        if not sep or not idx.isdigit():
            raise SchemaError(f"{where}: malformed segment {fields['segment']!r}")
        kwargs["segment"] = (tag, int(idx))
    return ColumnSpec(**kwargs)


def load_schema(path) -> Schema:
    with open(path, "r", encoding="utf-8") as f:
        lines = [l for l in f.read().split("\n") if l.strip()]
    return Schema(tuple(parse_schema_line(l, f"{path}, line {i + 1}") for i, l in enumerate(lines)))


# ----------------------------------------------------------- segment parsing


def parse_pnr_segments(text: str, schema: Schema) -> Dataset:
    """Parse a simplified segment-message file: one record per line, each
    segment `TAG+elem1+...+elemN'`. Columns find their value through the
    schema's (TAG, elementIndex) mapping; absent segments or elements give
    Missing. Unmapped tags are skipped; a duplicated mapped tag is an error."""
    mapped = {}
    for c in schema:
        if c.segment is not None:
            mapped.setdefault(c.segment[0], []).append(c)
    max_idx = {tag: max(c.segment[1] for c in cs) for tag, cs in mapped.items()}

    records = [l.strip() for l in text.split("\n") if l.strip()]
    rows = []
    for ri, line in enumerate(records, start=1):
        chunks = line.split("'")
        if chunks[-1] != "":
            raise DataError(f"record {ri}: unterminated segment {chunks[-1]!r}")
        seen = {}
        for chunk in chunks[:-1]:
            parts = chunk.split("+")
            tag = parts[0]
            if not tag:
                raise DataError(f"record {ri}: malformed segment (no tag) in {chunk!r}")
            if tag not in mapped:
                continue
            if tag in seen:
                raise DataError(f"record {ri}: duplicate segment tag {tag!r}")
            elems = parts[1:]
            if len(elems) > max_idx[tag] + 1:
                raise DataError(
                    f"record {ri}: segment {tag!r} has {len(elems)} elements, "
                    f"schema declares at most {max_idx[tag] + 1}"
                )
            seen[tag] = elems
        row = []
        for c in schema:
            if c.segment is None:
                row.append(None)
                continue
            tag, idx = c.segment
            elems = seen.get(tag)
            value = elems[idx] if elems is not None and idx < len(elems) else ""
            if value == "":
                if not c.nullable:
                    raise DataError(
                        f"record {ri}, column {c.name!r}: Missing in non-nullable column"
                    )
                row.append(None)
            elif c.is_numeric:
                row.append(_check_numeric_cell(c, value, f"record {ri}, column {c.name!r}"))
            else:
                if value not in c.levels:
                    raise DataError(
                        f"record {ri}, column {c.name!r}: unknown category level {value!r}"
                    )
                row.append(value)
        rows.append(tuple(row))
    return Dataset.from_rows(schema, rows)


# --------------------------------------------------------- surrogate dataset

_COUNTRIES = (
    "AR", "AU", "BR", "CA", "CH", "CN", "DE", "EG", "ES", "FR",
    "GB", "IN", "IT", "JP", "KR", "MA", "MX", "NG", "US", "ZA",
)


def surrogate_schema() -> Schema:
    """The 12-feature PNR schema used by the surrogate generator."""
    return Schema((
        ColumnSpec("CountryOrigin", CATEGORICAL, levels=_COUNTRIES, segment=("ORG", 0)),
        ColumnSpec("CountryDestination", CATEGORICAL, levels=_COUNTRIES, segment=("DST", 0)),
        ColumnSpec("CountryOfficeId", CATEGORICAL, levels=_COUNTRIES, segment=("OFF", 0)),
        ColumnSpec("StaySaturday", BINARY, levels=("0", "1"), segment=("SAT", 0)),
        ColumnSpec("PurchaseAnticipation", NUMERICAL, lo=0.0, hi=364.0, segment=("ANT", 0)),
        ColumnSpec("NumberPassengers", NUMERICAL, lo=1.0, hi=9.0, segment=("NPX", 0)),
        ColumnSpec("StayDuration", NUMERICAL, lo=0.0, hi=90.0, segment=("STY", 0)),
        ColumnSpec("Gender", BINARY, levels=("F", "M"), nullable=True, segment=("GEN", 0)),
        ColumnSpec("PNRWithChildren", BINARY, levels=("0", "1"), segment=("CHD", 0)),
        ColumnSpec("Age", NUMERICAL, lo=0.0, hi=99.0, nullable=True, segment=("AGE", 0)),
        ColumnSpec("Nationality", CATEGORICAL, levels=_COUNTRIES, segment=("NAT", 0)),
        ColumnSpec("BusinessLeisure", BINARY, levels=("0", "1"), segment=("BUL", 0)),
    ))


def make_surrogate(n: int, seed) -> Dataset:
    """n rows from the fixed surrogate law.

    Business bookings (30%) buy late (Exp mean 7 days), stay short (Poisson 2),
    rarely bridge a Saturday (20%), and skew older (Normal(45,10)); leisure is
    the opposite profile. CountryOfficeId and Nationality correlate with
    CountryOrigin. Age and Gender carry independent missingness (20% / 10%).
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    schema = surrogate_schema()
    s = Stream(seed)
    nc = len(_COUNTRIES)

    biz = s.child("business").bernoulli(0.30, n)
    ant = s.child("anticipation").exponentials(1.0, n) * np.where(biz, 7.0, 45.0)
    ant = np.clip(np.round(ant), 0.0, 364.0)
    stay = np.clip(s.child("stay").poissons(np.where(biz, 2.0, 10.0), n), 0, 90).astype(np.float64)
    sat = s.child("saturday").uniforms(n) < np.where(biz, 0.2, 0.8)
    age = s.child("age").normals(n) * np.where(biz, 10.0, 16.0) + np.where(biz, 45.0, 38.0)
    age = np.clip(age, 0.0, 99.0)

    origin = s.child("origin").integers(0, nc, n)
    dest = s.child("destination").integers(0, nc, n)
    office = np.where(
        s.child("office").bernoulli(0.8, n), origin, s.child("office_alt").integers(0, nc, n)
    )
    nat = np.where(
        s.child("nationality").bernoulli(0.7, n), origin, s.child("nat_alt").integers(0, nc, n)
    )

    npax = (1 + s.child("passengers").binomials(8, 0.15, n)).astype(np.float64)
    children = s.child("children").bernoulli(0.15, n).astype(np.int64)
    gender = s.child("gender").bernoulli(0.5, n).astype(np.int64)

    age[s.child("age_missing").bernoulli(0.2, n)] = np.nan
    gender[s.child("gender_missing").bernoulli(0.1, n)] = -1

    return Dataset(schema, [
        origin,
        dest,
        office,
        sat.astype(np.int64),
        ant,
        npax,
        stay,
        gender,
        children,
        age,
        nat,
        biz.astype(np.int64),
    ])


def split_dataset(d: Dataset, test_fraction: float, seed):
    """Disjoint (train, test) partition; |test| = round(fraction * |d|),
    nudged so neither side is empty when |d| >= 2."""
    if len(d) == 0:
        raise DataError("cannot split an empty Dataset")
    if not (0.0 < test_fraction < 1.0):
        raise ValueError(f"test_fraction must be in (0,1), got {test_fraction}")
    n = len(d)
    n_test = int(math.floor(test_fraction * n + 0.5))
    if n >= 2:
        n_test = min(max(n_test, 1), n - 1)
    perm = Stream(seed).child("split").permutation(n)
    return d.take(perm[n_test:]), d.take(perm[:n_test])
