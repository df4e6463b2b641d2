import datetime as dt

import pytest
from hypothesis import given, strategies as st

from dlmo.core import (
    DlmoLabel, InvalidInterval, SleepRecord, Timestamp, clock_of_day, normalize_dst,
    sleep_midpoint, to_continuous_hours,
)

DAY = dt.date(2016, 3, 1)


def test_dst_shifts_back_one_hour():
    ts = normalize_dst(Timestamp(dt.datetime(2016, 3, 1, 14, 0), True))
    assert ts == Timestamp(dt.datetime(2016, 3, 1, 13, 0), False)


def test_standard_time_unchanged():
    ts = Timestamp(dt.datetime(2016, 3, 1, 14, 0), False)
    assert normalize_dst(ts) == ts


@given(st.datetimes(min_value=dt.datetime(2000, 1, 2), max_value=dt.datetime(2100, 1, 1)),
       st.booleans())
def test_normalize_is_idempotent(clock, flag):
    once = normalize_dst(Timestamp(clock, flag))
    assert normalize_dst(once) == once


@pytest.mark.parametrize("clock, expected", [
    (dt.datetime(2016, 3, 1, 0, 0), 0.0),
    (dt.datetime(2016, 3, 2, 1, 30), 25.5),
    (dt.datetime(2016, 2, 29, 23, 0), -1.0),
])
def test_continuous_hours(clock, expected):
    assert to_continuous_hours(Timestamp(clock), DAY) == expected


@given(st.integers(-10_000, 100_000))
def test_minute_aligned_hours_are_exact(minutes):
    clock = dt.datetime.combine(DAY, dt.time()) + dt.timedelta(minutes=minutes)
    assert to_continuous_hours(Timestamp(clock), DAY) == minutes / 60


def test_midpoint_examples():
    assert sleep_midpoint(23.0, 31.0) == 27.0
    assert clock_of_day(27.0) == 3.0
    assert sleep_midpoint(0.0, 8.0) == 4.0
    with pytest.raises(InvalidInterval):
        sleep_midpoint(22.0, 22.0)


def test_sleep_record_day_reference():
    # went to bed 23:00 on day 4, woke 07:00 on day 5
    rec = SleepRecord("P1", 5, 4 * 24 + 23.0, 5 * 24 + 7.0)
    assert rec.midpoint == 5 * 24 + 3.0
    assert rec.day_referenced_midpoint == 27.0


def test_sleep_record_rejects_bad_intervals():
    with pytest.raises(InvalidInterval):
        SleepRecord("P1", 0, 8.0, 8.0)
    with pytest.raises(InvalidInterval):
        SleepRecord("P1", 1, 0.0, 24.0)


def test_label_range():
    assert DlmoLabel("P1", DAY, 25.5).phi == 25.5
    with pytest.raises(ValueError):
        DlmoLabel("P1", DAY, 40.0)
