"""Domain types and the continuous-hours time axis.

Every clock quantity in the package is a float number of hours on a
per-participant axis anchored at midnight of the first study day.  Values
may exceed 24 or be negative; ``value % 24`` recovers the clock of day.
Internally, instants on the minute grid are produced as ``minutes / 60`` so
that writers and readers agree bit-for-bit.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

ContinuousHours = float

CHANNELS = ("LE", "ST", "AC")


class DlmoError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInterval(DlmoError, ValueError):
    pass


@dataclass(frozen=True)
class Timestamp:
    local_clock: dt.datetime
    dst_active: bool = False


@dataclass(frozen=True)
class DlmoLabel:
    """DLMO for one collection day, in hours after that day's midnight."""

    participant: str
    collection_day: dt.date
    phi: ContinuousHours

    def __post_init__(self):
        if not 12.0 <= self.phi < 36.0:
            raise ValueError(
                f"DLMO {self.phi!r} h for {self.participant} outside [12, 36)"
            )


@dataclass(frozen=True)
class SleepRecord:
    """One main sleep episode.

    ``day_index`` is the study day (0 = anchor day) on which the episode
    ends, i.e. the wake-up day.  Onset and offset are absolute continuous
    hours.
    """

    participant: str
    day_index: int
    onset: ContinuousHours
    offset: ContinuousHours

    def __post_init__(self):
        if not self.onset < self.offset:
            raise InvalidInterval(
                f"sleep onset {self.onset} not before offset {self.offset}"
            )
        if self.offset - self.onset >= 24.0:
            raise InvalidInterval("sleep episode must be shorter than 24 h")

    @property
    def midpoint(self) -> ContinuousHours:
        return sleep_midpoint(self.onset, self.offset)

    @property
    def day_referenced_midpoint(self) -> float:
        """Midpoint in hours after midnight of the evening the episode began.

        A 03:00 midpoint maps to 27.0 regardless of the study day, which keeps
        moving-average regressors on the same scale as DLMO labels.
        """
        return self.midpoint - 24.0 * (self.day_index - 1)


def normalize_dst(ts: Timestamp) -> Timestamp:
    """Shift daylight-saving clock readings back to standard time."""
    if not ts.dst_active:
        return ts
    return Timestamp(ts.local_clock - dt.timedelta(hours=1), False)


def minutes_since_anchor(clock: dt.datetime, anchor_day: dt.date) -> int:
    """Whole minutes between ``anchor_day`` midnight and ``clock``."""
    delta = clock - dt.datetime.combine(anchor_day, dt.time())
    return delta.days * 1440 + delta.seconds // 60


def to_continuous_hours(ts: Timestamp, anchor_day: dt.date) -> ContinuousHours:
    """Map a DST-normalized timestamp onto the participant's hour axis."""
    clock = ts.local_clock
    delta = clock - dt.datetime.combine(anchor_day, dt.time())
    seconds = delta.days * 86400 + delta.seconds + delta.microseconds / 1e6
    if seconds % 60 == 0:
        return int(seconds // 60) / 60.0
    return seconds / 3600.0


def clock_of_day(value: ContinuousHours) -> float:
    return value % 24.0


def sleep_midpoint(onset: ContinuousHours, offset: ContinuousHours) -> ContinuousHours:
    if not onset < offset:
        raise InvalidInterval(f"onset {onset} must precede offset {offset}")
    return (onset + offset) / 2.0
