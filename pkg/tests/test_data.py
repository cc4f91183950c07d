import math

import numpy as np
import pytest

from pnrgan.data import (
    BINARY,
    CATEGORICAL,
    NUMERICAL,
    ColumnSpec,
    DataError,
    Dataset,
    Schema,
    SchemaError,
    load_csv,
    load_schema,
    make_surrogate,
    parse_pnr_segments,
    save_schema,
    split_dataset,
    surrogate_schema,
    write_csv,
)


def small_schema():
    return Schema((
        ColumnSpec("Origin", CATEGORICAL, levels=("FR", "DE", "US"), segment=("ORG", 0)),
        ColumnSpec("Age", NUMERICAL, lo=0.0, hi=99.0, nullable=True, segment=("AGE", 0)),
        ColumnSpec("Flag", BINARY, levels=("0", "1"), segment=("FLG", 0)),
    ))


# ------------------------------------------------------------------- schema


def test_column_spec_contracts():
    with pytest.raises(SchemaError):
        ColumnSpec("X", NUMERICAL, lo=5.0, hi=5.0)
    with pytest.raises(SchemaError):
        ColumnSpec("X", CATEGORICAL, levels=("a",))
    with pytest.raises(SchemaError):
        ColumnSpec("X", BINARY, levels=("a", "b", "c"))
    with pytest.raises(SchemaError):
        ColumnSpec("X", CATEGORICAL, levels=("a", "a"))
    with pytest.raises(SchemaError):
        ColumnSpec("X", "weird")
    with pytest.raises(SchemaError):
        ColumnSpec("bad,name", NUMERICAL, lo=0, hi=1)
    with pytest.raises(SchemaError):
        Schema((ColumnSpec("A", NUMERICAL, lo=0, hi=1), ColumnSpec("A", NUMERICAL, lo=0, hi=1)))


def test_schema_sidecar_round_trip(tmp_path):
    schema = surrogate_schema()
    p = tmp_path / "schema.txt"
    save_schema(schema, p)
    assert load_schema(p) == schema


def test_schema_sidecar_errors(tmp_path):
    p = tmp_path / "schema.txt"
    p.write_text("column=A;kind=numerical;nullable=0\n")
    with pytest.raises(SchemaError, match="range"):
        load_schema(p)
    p.write_text("column=A;kind=categorical;levels=a|b;nullable=2\n")
    with pytest.raises(SchemaError, match="nullable"):
        load_schema(p)
    p.write_text("column=A;kind=numerical;range=0:1;nullable=0;segment=TAG\n")
    with pytest.raises(SchemaError, match="segment"):
        load_schema(p)


# ------------------------------------------------------------------ dataset


def test_dataset_invariants_enforced():
    schema = small_schema()
    Dataset.from_rows(schema, [("FR", 30.0, "1"), ("DE", None, "0")])
    with pytest.raises(DataError, match="unknown category"):
        Dataset.from_rows(schema, [("XX", 30.0, "1")])
    with pytest.raises(DataError, match="outside range"):
        Dataset.from_rows(schema, [("FR", 120.0, "1")])
    with pytest.raises(DataError, match="non-nullable"):
        Dataset.from_rows(schema, [(None, 30.0, "1")])
    with pytest.raises(DataError, match="row 1"):
        Dataset.from_rows(schema, [("FR", 1.0, "0"), ("FR", 1.0)])


def test_dataset_rows_round_trip():
    schema = small_schema()
    rows = [("FR", 30.5, "1"), ("DE", None, "0"), ("US", 0.0, "1")]
    d = Dataset.from_rows(schema, rows)
    assert list(d.rows()) == rows
    assert len(d) == 3
    assert d == Dataset.from_rows(schema, rows)
    assert d != d.take([0, 1])
    assert list(d.take([2, 0]).rows()) == [rows[2], rows[0]]


# ---------------------------------------------------------------------- csv


def test_csv_round_trip_surrogate(tmp_path):
    d = make_surrogate(100, 3)
    p = tmp_path / "d.csv"
    write_csv(d, p)
    assert load_csv(p, d.schema) == d


def test_csv_header_only(tmp_path):
    schema = small_schema()
    d = Dataset.from_rows(schema, [])
    p = tmp_path / "empty.csv"
    write_csv(d, p)
    assert p.read_text() == "Origin,Age,Flag\n"
    assert load_csv(p, schema) == d


def test_csv_table_row_parses(tmp_path):
    line = "FR,DE,FR,1,10,2,5,M,0,34,FR,0"
    schema = surrogate_schema()
    p = tmp_path / "one.csv"
    p.write_text(",".join(schema.names) + "\n" + line + "\n")
    d = load_csv(p, schema)
    assert len(d) == 1
    row = next(d.rows())
    assert row == ("FR", "DE", "FR", "1", 10.0, 2.0, 5.0, "M", "0", 34.0, "FR", "0")


def test_csv_missing_field(tmp_path):
    schema = small_schema()
    p = tmp_path / "m.csv"
    p.write_text("Origin,Age,Flag\nFR,,1\n")
    d = load_csv(p, schema)
    assert next(d.rows()) == ("FR", None, "1")


def test_csv_errors_carry_location(tmp_path):
    schema = small_schema()
    p = tmp_path / "bad.csv"
    p.write_text("Origin,Age,Flag\nFR,abc,1\n")
    with pytest.raises(DataError, match=r"row 0, column 'Age'"):
        load_csv(p, schema)
    p.write_text("Origin,Age,Flag\nFR,30,1\nXX,30,1\n")
    with pytest.raises(DataError, match=r"row 1, column 'Origin'"):
        load_csv(p, schema)
    p.write_text("Origin,Age\n")
    with pytest.raises(DataError, match="header"):
        load_csv(p, schema)
    p.write_text("Origin,Age,Flag\nFR,200,1\n")
    with pytest.raises(DataError, match="outside range"):
        load_csv(p, schema)


def test_csv_shortest_round_trip_formatting(tmp_path):
    schema = Schema((ColumnSpec("X", NUMERICAL, lo=-1e6, hi=1e6),))
    vals = [0.1, 1 / 3, 123456.789, -0.0001, 42.0]
    d = Dataset.from_rows(schema, [(v,) for v in vals])
    p = tmp_path / "x.csv"
    write_csv(d, p)
    assert load_csv(p, schema) == d
    assert "42" in p.read_text().split("\n")[5]


# ----------------------------------------------------------------- segments


def test_parse_segments_basic():
    schema = Schema((
        ColumnSpec("Origin", CATEGORICAL, levels=("FR", "DE"), segment=("ORG", 0)),
        ColumnSpec("Dest", CATEGORICAL, levels=("FR", "DE"), segment=("DST", 0)),
    ))
    d = parse_pnr_segments("ORG+FR'DST+DE'", schema)
    assert list(d.rows()) == [("FR", "DE")]


def test_parse_segments_missing_segment_gives_missing():
    schema = small_schema()
    d = parse_pnr_segments("ORG+FR'FLG+1'", schema)
    assert list(d.rows()) == [("FR", None, "1")]


def test_parse_segments_multi_record_and_elements():
    schema = Schema((
        ColumnSpec("Origin", CATEGORICAL, levels=("FR", "DE"), segment=("TRP", 0)),
        ColumnSpec("Days", NUMERICAL, lo=0, hi=90, nullable=True, segment=("TRP", 1)),
    ))
    d = parse_pnr_segments("TRP+FR+5'\nTRP+DE'\n", schema)
    assert list(d.rows()) == [("FR", 5.0), ("DE", None)]


def test_parse_segments_errors():
    schema = small_schema()
    with pytest.raises(DataError, match="record 1.*ORG"):
        parse_pnr_segments("ORG+FR+EXTRA'", schema)
    with pytest.raises(DataError, match="duplicate"):
        parse_pnr_segments("ORG+FR'ORG+DE'FLG+1'", schema)
    with pytest.raises(DataError, match="no tag"):
        parse_pnr_segments("+FR'", schema)
    with pytest.raises(DataError, match="unterminated"):
        parse_pnr_segments("ORG+FR'FLG+1", schema)
    with pytest.raises(DataError, match=r"record 2, column 'Flag'"):
        parse_pnr_segments("ORG+FR'FLG+1'\nORG+DE'", schema)
    # unmapped tags are skipped
    d = parse_pnr_segments("ZZZ+junk'ORG+FR'FLG+0'", schema)
    assert list(d.rows()) == [("FR", None, "0")]


# ---------------------------------------------------------------- surrogate


def test_surrogate_deterministic_and_sized():
    assert len(make_surrogate(0, 1)) == 0
    a = make_surrogate(500, 11)
    b = make_surrogate(500, 11)
    assert a == b
    assert a != make_surrogate(500, 12)


def test_surrogate_marginals_within_3_sigma():
    n = 100000
    d = make_surrogate(n, 1234)

    def check_frac(actual, p):
        assert abs(actual - p) < 3.0 * math.sqrt(p * (1 - p) / n) + 1e-12

    biz = d.codes("BusinessLeisure")
    check_frac(biz.mean(), 0.30)
    check_frac((d.codes("PNRWithChildren") == 1).mean(), 0.15)
    check_frac(np.isnan(d.numeric("Age")).mean(), 0.20)
    check_frac((d.codes("Gender") == -1).mean(), 0.10)
    check_frac((d.codes("CountryOfficeId") == d.codes("CountryOrigin")).mean(), 0.81)
    check_frac((d.codes("Nationality") == d.codes("CountryOrigin")).mean(), 0.715)

    sat = d.codes("StaySaturday")
    b = biz == 1
    nb, nl = int(b.sum()), int((~b).sum())
    assert abs(sat[b].mean() - 0.2) < 3.0 * math.sqrt(0.2 * 0.8 / nb)
    assert abs(sat[~b].mean() - 0.8) < 3.0 * math.sqrt(0.2 * 0.8 / nl)

    ant = d.numeric("PurchaseAnticipation")
    assert abs(ant[b].mean() - 7.0) < 3.0 * 7.0 / math.sqrt(nb) + 0.3
    assert abs(ant[~b].mean() - 45.0) < 3.0 * 45.0 / math.sqrt(nl) + 0.3

    stay = d.numeric("StayDuration")
    assert abs(stay[b].mean() - 2.0) < 3.0 * math.sqrt(2.0 / nb) + 0.01
    assert abs(stay[~b].mean() - 10.0) < 3.0 * math.sqrt(10.0 / nl) + 0.01

    age = d.numeric("Age")
    m = ~np.isnan(age)
    # clipping to [0,99] nudges the leisure mean up slightly; allow for it
    assert abs(age[m & b].mean() - 45.0) < 3.0 * 10.0 / math.sqrt(nb) + 0.1
    assert abs(age[m & ~b].mean() - 38.0) < 3.0 * 16.0 / math.sqrt(nl) + 0.35

    npax = d.numeric("NumberPassengers")
    assert abs(npax.mean() - 2.2) < 3.0 * math.sqrt(8 * 0.15 * 0.85 / n)
    assert npax.min() >= 1.0 and npax.max() <= 9.0

    for name in ("CountryOrigin", "CountryDestination"):
        counts = np.bincount(d.codes(name), minlength=20) / n
        assert np.all(np.abs(counts - 0.05) < 3.0 * math.sqrt(0.05 * 0.95 / n))


# -------------------------------------------------------------------- split


def test_split_partition_properties():
    d = make_surrogate(10, 5)
    train, test = split_dataset(d, 0.2, 99)
    assert len(train) == 8 and len(test) == 2
    union = sorted(list(train.rows()) + list(test.rows()), key=repr)
    assert union == sorted(d.rows(), key=repr)
    t2 = split_dataset(d, 0.2, 99)
    assert t2[0] == train and t2[1] == test
    assert split_dataset(d, 0.2, 100)[1] != test


def test_split_never_empties_a_side():
    d = make_surrogate(2, 5)
    train, test = split_dataset(d, 0.01, 1)
    assert len(train) == 1 and len(test) == 1
    train, test = split_dataset(d, 0.99, 1)
    assert len(train) == 1 and len(test) == 1
    with pytest.raises(ValueError):
        split_dataset(d, 1.5, 1)
    with pytest.raises(DataError):
        split_dataset(make_surrogate(0, 1), 0.5, 1)
