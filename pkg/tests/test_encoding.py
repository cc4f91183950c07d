import numpy as np
import pytest

from pnrgan.data import (
    BINARY,
    CATEGORICAL,
    NUMERICAL,
    ColumnSpec,
    Dataset,
    Schema,
    make_surrogate,
)
from pnrgan.encoding import (
    INDICATOR,
    NUMERIC,
    ONEHOT,
    UNK,
    EncodedMatrix,
    EncodingError,
    band_decode,
    band_encode,
    band_layout,
    decode,
    encode,
    fit_band_codec,
    fit_plan,
    load_band_codec,
    load_plan,
    save_band_codec,
    save_plan,
)


def tiny_schema():
    return Schema((
        ColumnSpec("Cat", CATEGORICAL, levels=("A", "B"), nullable=True),
        ColumnSpec("X", NUMERICAL, lo=0.0, hi=100.0, nullable=True),
        ColumnSpec("Flag", BINARY, levels=("0", "1")),
    ))


def tiny_data():
    return Dataset.from_rows(tiny_schema(), [
        ("A", 10.0, "0"),
        ("B", 30.0, "1"),
        (None, 20.0, "0"),
        ("A", None, "1"),
    ])


# --------------------------------------------------------------------- plan


def test_fit_plan_layout():
    plan = fit_plan(tiny_data())
    kinds = [(b.source, b.kind, b.width) for b in plan.blocks]
    assert kinds == [("Cat", ONEHOT, 3), ("X", NUMERIC, 1), ("X", INDICATOR, 2), ("Flag", ONEHOT, 2)]
    assert plan.block("Cat", ONEHOT).levels == ("A", "B", UNK)
    b = plan.block("X", NUMERIC)
    assert (b.lo, b.hi) == (10.0, 30.0)
    assert plan.width == 8
    starts = [b.start for b in plan.blocks]
    assert starts == [0, 3, 4, 6]


def test_fit_plan_errors():
    schema = Schema((ColumnSpec("X", NUMERICAL, lo=0.0, hi=10.0),))
    with pytest.raises(EncodingError):
        fit_plan(Dataset.from_rows(schema, []))
    with pytest.raises(EncodingError, match="distinct"):
        fit_plan(Dataset.from_rows(schema, [(5.0,), (5.0,)]))


def test_unk_level_reserved():
    schema = Schema((ColumnSpec("C", CATEGORICAL, levels=("A", UNK), nullable=True),))
    with pytest.raises(EncodingError, match="reserved"):
        fit_plan(Dataset.from_rows(schema, [("A",)]))


# ------------------------------------------------------------------- encode


def test_encode_values():
    d = tiny_data()
    plan = fit_plan(d)
    m = encode(d, plan, 0)
    m.check()
    v = m.values
    assert v.shape == (4, 8)
    # categorical one-hots, UNK for the Missing cell
    assert v[0, 0:3].tolist() == [1.0, 0.0, 0.0]
    assert v[1, 0:3].tolist() == [0.0, 1.0, 0.0]
    assert v[2, 0:3].tolist() == [0.0, 0.0, 1.0]
    # numeric endpoints map to 0 and 1 exactly
    assert v[0, 3] == 0.0 and v[1, 3] == 1.0
    assert v[2, 3] == 0.5
    # indicator: "filled" one-hot only on the missing row
    assert v[:3, 4:6].tolist() == [[1.0, 0.0]] * 3
    assert v[3, 4:6].tolist() == [0.0, 1.0]
    # the fill value is some other row's encoded value
    assert v[3, 3] in (0.0, 0.5, 1.0)


def test_encode_clips_out_of_range_test_values():
    d = tiny_data()
    plan = fit_plan(d)
    wide = Dataset.from_rows(d.schema, [("A", 99.0, "0"), ("B", 5.0, "1")])
    m = encode(wide, plan, 0)
    assert m.values[0, 3] == 1.0 and m.values[1, 3] == 0.0


def test_encode_missing_without_unk_errors():
    schema = Schema((ColumnSpec("C", CATEGORICAL, levels=("A", "B")),))
    d = Dataset.from_rows(schema, [("A",)])
    plan = fit_plan(d)
    hacked = Dataset(schema, [np.array([-1], dtype=np.int64)], _validate=False)
    with pytest.raises(EncodingError, match="not representable"):
        encode(hacked, plan, 0)


def test_encode_deterministic():
    d = make_surrogate(200, 3)
    plan = fit_plan(d)
    assert np.array_equal(encode(d, plan, 5).values, encode(d, plan, 5).values)
    # different seed -> different fills (Age has ~20% missing)
    assert not np.array_equal(encode(d, plan, 5).values, encode(d, plan, 6).values)


# ------------------------------------------------------------------- decode


def test_decode_restores_surrogate_exactly():
    d = make_surrogate(1000, 17)
    plan = fit_plan(d)
    m = encode(d, plan, 23)
    assert decode(m, plan) == d


def test_decode_argmax_rules():
    d = tiny_data()
    plan = fit_plan(d)
    soft = np.zeros((1, 8))
    soft[0, 0:3] = (0.2, 0.5, 0.3)   # argmax B
    soft[0, 3] = 0.25                # numeric 15.0
    soft[0, 4:6] = (0.1, 0.9)        # filled -> Missing
    soft[0, 6:8] = (0.5, 0.5)        # tie -> lowest index -> "0"
    out = decode(EncodedMatrix(soft, plan.blocks), plan)
    assert next(out.rows()) == ("B", None, "0")
    unk = np.zeros((1, 8))
    unk[0, 2] = 1.0                  # UNK -> Missing
    unk[0, 3] = 0.0
    unk[0, 4] = 1.0
    unk[0, 7] = 1.0
    assert next(decode(EncodedMatrix(unk, plan.blocks), plan).rows()) == (None, 10.0, "1")


def test_decode_rejects_nan():
    d = tiny_data()
    plan = fit_plan(d)
    m = encode(d, plan, 0)
    bad = m.values.copy()
    bad[0, 0] = np.nan
    with pytest.raises(EncodingError, match="NaN"):
        decode(EncodedMatrix(bad, plan.blocks), plan)


def test_unit_scaling_is_exact_on_awkward_bounds():
    # bounds that do not divide nicely; identity must still be bitwise
    schema = Schema((ColumnSpec("X", NUMERICAL, lo=-1e3, hi=1e3),))
    rng = np.random.default_rng(0)
    vals = np.round(rng.uniform(-0.123456, 987.654, 500), 7)
    vals[0], vals[1] = -0.123456, 987.654
    d = Dataset.from_rows(schema, [(float(v),) for v in vals])
    plan = fit_plan(d)
    out = decode(encode(d, plan, 0), plan)
    assert out == d


# --------------------------------------------------------------------- band


def test_band_codec_partition():
    d = make_surrogate(2000, 9)
    plan = fit_plan(d)
    codec = fit_band_codec(d, plan)
    nonnum = [b for b in plan.blocks if b.kind != NUMERIC]
    assert len(codec.entries) == len(nonnum)
    for e in codec.entries:
        w = e.widths
        assert abs(w.sum() - 1.0) < 1e-12
        assert np.all(w >= 0)
        assert np.all(np.diff(w) <= 1e-12)  # descending proportions
        assert np.allclose(e.sigmas, w / 6.0)
        assert e.edges[0] == 0.0 and e.edges[-1] == 1.0


def test_band_two_level_example():
    schema = Schema((ColumnSpec("C", CATEGORICAL, levels=("A", "B")),))
    d = Dataset.from_rows(schema, [("A",)] * 3 + [("B",)])
    plan = fit_plan(d)
    codec = fit_band_codec(d, plan)
    e = codec.entries[0]
    assert e.levels == ("A", "B")
    assert e.edges == (0.0, 0.75, 1.0)
    assert e.midpoints.tolist() == [0.375, 0.875]
    assert e.sigmas.tolist() == [0.125, 1 / 24]


def test_band_sole_level():
    schema = Schema((ColumnSpec("C", CATEGORICAL, levels=("A", "B")),))
    d = Dataset.from_rows(schema, [("A",)] * 10)
    plan = fit_plan(d)
    e = fit_band_codec(d, plan).entries[0]
    assert e.edges == (0.0, 1.0, 1.0)
    assert e.midpoints[0] == 0.5 and e.sigmas[0] == 1 / 6


def test_band_boundary_decode_is_right_open():
    schema = Schema((ColumnSpec("C", CATEGORICAL, levels=("A", "B")),))
    d = Dataset.from_rows(schema, [("A",)] * 3 + [("B",)])
    plan = fit_plan(d)
    codec = fit_band_codec(d, plan)
    m = EncodedMatrix(np.array([[0.0], [0.75], [1.0], [0.74999]]), band_layout(plan), "band")
    got = [r[0] for r in band_decode(m, codec, plan).rows()]
    assert got == ["A", "B", "B", "A"]


def test_band_encode_interval_mass():
    # ~99.73% of Normal(mid, (w/6)^2) mass lies inside the interval
    schema = Schema((ColumnSpec("C", CATEGORICAL, levels=("A", "B", "C")),))
    d = Dataset.from_rows(schema, [("A",)] * 5000 + [("B",)] * 3000 + [("C",)] * 2000)
    plan = fit_plan(d)
    codec = fit_band_codec(d, plan)
    big = Dataset.from_rows(schema, [("B",)] * 10000)
    m = band_encode(big, codec, plan, 5)
    e = codec.entries[0]
    k = e.levels.index("B")
    inside = (m.values[:, 0] >= e.edges[k]) & (m.values[:, 0] < e.edges[k + 1])
    assert inside.mean() >= 0.99


def test_band_round_trip_accuracy():
    d = make_surrogate(10000, 31)
    plan = fit_plan(d)
    codec = fit_band_codec(d, plan)
    back = band_decode(band_encode(d, codec, plan, 7), codec, plan)
    cat_cols = [c.name for c in d.schema if not c.is_numeric]
    total = correct = 0
    for name in cat_cols:
        a, b = d.codes(name), back.codes(name)
        total += len(a)
        correct += int((a == b).sum())
    assert correct / total >= 0.99
    # numerics round trip exactly where observed (non-missing stays exact)
    for name in ("PurchaseAnticipation", "NumberPassengers", "StayDuration"):
        assert np.array_equal(d.numeric(name), back.numeric(name))
    # Missing mask of Age survives the indicator band column
    agree = np.isnan(d.numeric("Age")) == np.isnan(back.numeric("Age"))
    assert agree.mean() >= 0.99


def test_band_matrix_shape_and_range():
    d = make_surrogate(500, 2)
    plan = fit_plan(d)
    codec = fit_band_codec(d, plan)
    m = band_encode(d, codec, plan, 3)
    assert m.form == "band"
    assert m.values.shape == (500, plan.n_blocks)
    assert m.values.min() >= 0.0 and m.values.max() <= 1.0


# ------------------------------------------------------------ serialization


def test_plan_round_trip_through_file(tmp_path):
    d = make_surrogate(300, 4)
    plan = fit_plan(d)
    p = tmp_path / "plan.txt"
    save_plan(plan, p)
    loaded = load_plan(p)
    assert loaded == plan
    # encoding with the loaded plan is identical
    assert np.array_equal(encode(d, plan, 9).values, encode(d, loaded, 9).values)


def test_band_codec_round_trip_through_file(tmp_path):
    d = make_surrogate(300, 4)
    plan = fit_plan(d)
    codec = fit_band_codec(d, plan)
    p = tmp_path / "band.txt"
    save_band_codec(codec, p)
    assert load_band_codec(p) == codec


def test_load_plan_rejects_garbage(tmp_path):
    p = tmp_path / "junk.txt"
    p.write_text("nothing here\n")
    with pytest.raises(EncodingError):
        load_plan(p)
    p.write_text("column=A;kind=numerical;range=0.0:1.0;nullable=0\nblock=A;kind=wat\n")
    with pytest.raises(EncodingError):
        load_plan(p)


def test_matrix_check_catches_violations():
    d = tiny_data()
    plan = fit_plan(d)
    m = encode(d, plan, 0)
    soft = m.values.copy()
    soft[0, 0:3] = (0.2, 0.5, 0.3)
    EncodedMatrix(soft, plan.blocks).check(soft=True)
    with pytest.raises(EncodingError, match="hard"):
        EncodedMatrix(soft, plan.blocks).check(soft=False)
    bad = m.values.copy()
    bad[0, 0] = 1.5
    with pytest.raises(EncodingError):
        EncodedMatrix(bad, plan.blocks).check(soft=True)
