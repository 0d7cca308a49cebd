import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peakflow.core import CatchmentSeries, GapError, IngestError, InsufficientDataError, SplitSpec
from peakflow.ingest import (
    TimeSeries,
    align_and_build,
    chronological_split,
    load_catchment,
    read_series,
    resample_to_step,
    write_series,
)

T0 = np.datetime64("2000-01-01T00:00:00")
H = np.timedelta64(3600, "s")


def _write(path, lines):
    path.write_text("timestamp,value\n" + "\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_read_three_rows_in_order(tmp_path):
    p = _write(tmp_path / "a.csv", ["2000-01-01T00:00:00,1.5", "2000-01-01T06:00:00,2", "2000-01-01 12:00,0"])
    s = read_series(p)
    assert s.values.tolist() == [1.5, 2.0, 0.0]
    assert (np.diff(s.timestamps) == 6 * H).all()


def test_duplicate_timestamp_reported_with_line(tmp_path):
    p = _write(tmp_path / "a.csv", ["2000-01-01T00:00:00,1", "2000-01-01T06:00:00,2", "2000-01-01T06:00:00,3"])
    with pytest.raises(IngestError, match=r":4: duplicate timestamp"):
        read_series(p)


def test_non_monotone_reported(tmp_path):
    p = _write(tmp_path / "a.csv", ["2000-01-01T06:00:00,1", "2000-01-01T00:00:00,2"])
    with pytest.raises(IngestError, match="not increasing"):
        read_series(p)


def test_nan_is_missing_marker(tmp_path):
    p = _write(tmp_path / "a.csv", ["2000-01-01T00:00:00,1", "2000-01-01T06:00:00,NaN", "2000-01-01T12:00:00,2"])
    v = read_series(p).values
    assert np.isnan(v[1]) and v[0] == 1 and v[2] == 2


@pytest.mark.parametrize(
    "lines,match",
    [
        (["2000-01-01T00:00:00,abc"], r":2: bad value"),
        (["yesterday,1"], r":2: bad timestamp"),
        (["2000-01-01T00:00:00,1,2"], r":2: expected 2 columns"),
    ],
)
def test_parse_failures_carry_line_number(tmp_path, lines, match):
    with pytest.raises(IngestError, match=match):
        read_series(_write(tmp_path / "a.csv", lines))


def test_missing_header(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("2000-01-01T00:00:00,1\n")
    with pytest.raises(IngestError, match="header"):
        read_series(p)


def _hourly(values, start=T0 + H):
    return TimeSeries(start + H * np.arange(len(values)), np.asarray(values, dtype=float))


def test_resample_constant_block():
    out = resample_to_step(_hourly([1, 1, 1, 1, 1, 1]), 6)
    assert out.values.tolist() == [1.0]
    assert out.timestamps[0] == T0 + 6 * H  # trailing block (00:00, 06:00]


def test_resample_mean():
    # arithmetic mean oracle: (0+0+0+6+6+6)/6
    assert resample_to_step(_hourly([0, 0, 0, 6, 6, 6]), 6).values.tolist() == [sum([0, 0, 0, 6, 6, 6]) / 6]


def test_resample_drops_partial_block():
    assert len(resample_to_step(_hourly([1, 1, 1, 1, 1]), 6)) == 0
    out = resample_to_step(_hourly([2] * 6 + [1] * 5), 6)
    assert out.values.tolist() == [2.0]


def test_resample_missing_hour_gives_missing_block():
    out = resample_to_step(_hourly([1, 1, np.nan, 1, 1, 1, 2, 2, 2, 2, 2, 2]), 6)
    assert np.isnan(out.values[0]) and out.values[1] == 2.0


def test_resample_absent_hour_inside_record():
    ts = T0 + H * np.array([1, 2, 3, 4, 5, 6, 7, 8, 10, 11, 12, 13, 14, 15, 16, 17, 18])
    out = resample_to_step(TimeSeries(ts, np.ones(ts.size)), 6)
    assert out.values[0] == 1.0 and np.isnan(out.values[1]) and out.values[2] == 1.0


def test_resample_rejects_upsampling():
    s = TimeSeries(T0 + 12 * H * np.arange(3), np.ones(3))
    with pytest.raises(IngestError, match="upsample"):
        resample_to_step(s, 6)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1000, allow_nan=False), min_size=6, max_size=60))
def test_resample_never_fabricates(values):
    out = resample_to_step(_hourly(values), 6)
    n_full = len(values) // 6
    assert len(out) == n_full
    for i in range(n_full):
        block = values[6 * i: 6 * i + 6]
        assert out.values[i] == pytest.approx(sum(block) / 6, rel=1e-12, abs=1e-12)
        assert out.timestamps[i] == T0 + H * (6 * i + 6)


def _six(values, start=0):
    return TimeSeries(T0 + 6 * H * (start + np.arange(len(values))), np.asarray(values, dtype=float))


def test_align_identical_timestamps():
    s = align_and_build("a", _six([0, 1, 2, 3]), _six([5, 5, 6, 7]))
    assert isinstance(s, CatchmentSeries) and len(s) == 4


def test_align_trims_to_overlap():
    s = align_and_build("a", _six([0, 1, 2, 3], start=2), _six([1, 2, 3, 4, 5, 6]))
    assert len(s) == 4
    assert s.discharge.tolist() == [3, 4, 5, 6]
    assert s.timestamps[0] == T0 + 12 * H


def test_align_disjoint():
    with pytest.raises(IngestError, match="overlap"):
        align_and_build("a", _six([1, 2], start=10), _six([1, 2]))


def test_align_gap_reported():
    q = TimeSeries(T0 + 6 * H * np.array([0, 1, 3, 4]), np.ones(4))
    with pytest.raises(GapError) as info:
        align_and_build("a", _six([0, 0, 0, 0, 0]), q)
    assert info.value.gaps == [(str(T0 + 12 * H), str(T0 + 12 * H))]


def test_align_nan_is_gap():
    with pytest.raises(GapError):
        align_and_build("a", _six([0, np.nan, 0]), _six([1, 1, 1]))


def _series(n):
    ts = T0 + 6 * H * np.arange(n)
    return CatchmentSeries("a", ts, np.zeros(n), np.arange(n, dtype=float))


def test_split_lengths():
    # floor arithmetic oracle computed with integers: 1000*70//100, then *15//100
    train_end = 1000 * 70 // 100 - (1000 * 70 // 100) * 15 // 100
    tr, va, te = chronological_split(_series(1000), SplitSpec(0.7, 0.15), 7)
    assert (len(tr), len(va), len(te)) == (train_end, 105, 300) == (595, 105, 300)


def test_split_halves():
    tr, va, te = chronological_split(_series(100), SplitSpec(0.5, 0.0), 7)
    assert (len(tr), len(va), len(te)) == (50, 0, 50)


def test_split_insufficient():
    with pytest.raises(InsufficientDataError):
        chronological_split(_series(10), SplitSpec(0.7, 0.15), 7)


@settings(max_examples=50, deadline=None)
@given(st.integers(60, 3000), st.floats(0.3, 0.9), st.floats(0.0, 0.4))
def test_split_concatenation_reproduces_series(n, tf, vf):
    s = _series(n)
    try:
        blocks = chronological_split(s, SplitSpec(tf, vf), 1)
    except InsufficientDataError:
        # a positive fraction that floors to an empty block is refused
        assert int(int(n * tf) * vf) == 0 < vf
        return
    assert sum(len(b) for b in blocks) == n
    joined = np.concatenate([b.discharge for b in blocks])
    assert np.array_equal(joined, s.discharge)
    ts = np.concatenate([b.timestamps for b in blocks])
    assert np.array_equal(ts, s.timestamps)


def test_load_catchment_resamples_hourly(tmp_path):
    hours = T0 + H * np.arange(1, 6 * 10 + 1)
    write_series(tmp_path / "x_q.csv", hours, np.repeat(np.arange(10.0), 6))
    write_series(tmp_path / "x_rain.csv", T0 + 6 * H * np.arange(1, 11), np.ones(10))
    s = load_catchment("x", tmp_path / "x_rain.csv", tmp_path / "x_q.csv")
    assert len(s) == 10
    assert s.discharge.tolist() == list(np.arange(10.0))
