import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dlmo.ingest import MinuteSeries
from dlmo.preprocess import (
    DomainError, ExcessiveGap, HourlySeries, InsufficientHistory, MissingSleepRecord,
    assemble_day_window, assemble_midpoint_window, build_samples, fill_gaps, hourly_bin,
    impute_gaps, log_transform_le, missing_runs,
)

from conftest import make_record


def test_log_light_examples():
    assert log_transform_le(0) == 0
    assert log_transform_le(9) == pytest.approx(1.0, abs=1e-15)
    assert log_transform_le(999) == pytest.approx(3.0, abs=1e-15)
    with pytest.raises(DomainError):
        log_transform_le(-1)


@given(st.floats(0, 1e6), st.floats(1e-6, 1e6))
def test_log_light_increasing(x, dx):
    assert log_transform_le(x + dx) > log_transform_le(x)


def test_hourly_bin_examples():
    assert hourly_bin(MinuteSeries("ST", 0, np.full(60, 3.25))).values[0] == 3.25
    assert hourly_bin(MinuteSeries("ST", 0, np.arange(60.0))).values[0] == 29.5
    assert np.isnan(hourly_bin(MinuteSeries("ST", 0, np.full(60, np.nan))).values[0])


def test_impute_examples():
    hs = HourlySeries("ST", 0.0, np.array([1, np.nan, np.nan, 7.0]))
    assert impute_gaps(hs).values.tolist() == [1, 3, 5, 7]
    long = np.r_[1.0, np.full(13, np.nan), 2.0]
    np.testing.assert_array_equal(fill_gaps(long), long)
    full = np.arange(5.0)
    np.testing.assert_array_equal(fill_gaps(full), full)


def test_boundary_runs_untouched():
    v = np.array([np.nan, 1.0, 2.0, np.nan])
    np.testing.assert_array_equal(fill_gaps(v), v)


def _series_with_runs(draw):
    n = draw(st.integers(2, 80))
    vals = np.array(draw(st.lists(st.floats(-50, 50), min_size=n, max_size=n)))
    for _ in range(draw(st.integers(0, 4))):
        a = draw(st.integers(0, n - 1))
        vals[a:a + draw(st.integers(1, 20))] = np.nan
    return vals


@settings(max_examples=300)
@given(st.data())
def test_imputation_contract(data):
    v = _series_with_runs(data.draw)
    out = fill_gaps(v, 12)
    present = ~np.isnan(v)
    np.testing.assert_array_equal(out[present], v[present])
    idx = np.flatnonzero(present)
    for a, length in missing_runs(v):
        run = slice(a, a + length)
        bounded = a > 0 and a + length < v.size
        if bounded and length <= 12:
            expect = np.interp(np.arange(a, a + length), idx, v[idx])
            np.testing.assert_allclose(out[run], expect, rtol=0, atol=1e-12)
            lo, hi = sorted((v[a - 1], v[a + length]))
            assert np.all((out[run] >= lo - 1e-12) & (out[run] <= hi + 1e-12))
        else:
            assert np.isnan(out[run]).all()


def test_day_window_complete():
    win = assemble_day_window(make_record(), 1)
    assert win.features.shape == (24, 3)
    assert not np.isnan(win.features).any()
    assert win.wake_time == 31.0


def test_day_window_rows_start_at_wake():
    le = np.zeros(3 * 1440)
    le[31 * 60:32 * 60] = 9.0  # first hour after the 07:00 wake on day 1
    win = assemble_day_window(make_record(le=le), 1, ("LE",))
    assert win.features.shape == (24, 1)
    assert win.features[0, 0] == pytest.approx(1.0, abs=1e-15)
    assert win.features[1, 0] == 0.0


def test_thirteen_hour_gap_rejected():
    le = np.random.default_rng(1).uniform(0, 100, 3 * 1440)
    le[(31 + 5) * 60:(31 + 18) * 60] = np.nan
    with pytest.raises(ExcessiveGap) as err:
        assemble_day_window(make_record(le=le), 1)
    assert err.value.channel == "LE" and err.value.run_length == 13
    # twelve hours is still fillable
    le[(31 + 17) * 60:(31 + 18) * 60] = 5.0
    assert not np.isnan(assemble_day_window(make_record(le=le), 1).features).any()


def test_gap_straddling_window_start_uses_context():
    st_ = np.full(3 * 1440, 30.0)
    st_[:31 * 60] = 20.0
    st_[29 * 60:33 * 60] = np.nan
    win = assemble_day_window(make_record(st=st_), 1, ("ST",))
    # four missing bins between 20 (hour 28) and 30 (hour 33)
    np.testing.assert_allclose(win.features[:2, 0], [26.0, 28.0], atol=1e-12)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 71), st.integers(1, 20)), max_size=4))
def test_rejection_is_the_run_length_predicate(gaps):
    le = np.full(3 * 1440, 50.0)
    hourly = np.full(72, 1.0)
    for a, length in gaps:
        le[a * 60:(a + length) * 60] = np.nan
        hourly[a:a + length] = np.nan
    rec = make_record(le=le)
    # reference: after bounded filling, does any window hour stay missing?
    ctx = hourly[31 - 12:31 + 24 + 12]
    expect_reject = np.isnan(fill_gaps(ctx, 12)[12:36]).any()
    if expect_reject:
        with pytest.raises(ExcessiveGap):
            assemble_day_window(rec, 1, ("LE",))
    else:
        assemble_day_window(rec, 1, ("LE",))


def test_missing_sleep_record():
    rec = make_record(n_days=3)
    with pytest.raises(MissingSleepRecord):
        assemble_day_window(rec, 5)


def test_midpoint_window():
    rec = make_record(n_days=9)
    win = assemble_midpoint_window(rec, 8, 7)
    assert win.n == 7
    np.testing.assert_array_equal(win.midpoints, np.full(7, 27.0))
    assert assemble_midpoint_window(rec, 8, 3).midpoints.size == 3
    with pytest.raises(InsufficientHistory) as err:
        assemble_midpoint_window(rec, 4, 7)
    assert err.value.available == 5


def test_build_samples_counts_exclusions(small_cohort):
    ds, _ = small_cohort
    full = build_samples(ds, n=7)
    long = build_samples(ds, n=9)
    assert len(full) + sum(full.excluded.values()) == ds.n_labels
    assert long.excluded["insufficient_history"] > 0
    assert full.days.shape == (len(full), 24, 3)
    sub = full.with_channels(("AC",))
    np.testing.assert_array_equal(sub.days[:, :, 0], full.days[:, :, 2])
