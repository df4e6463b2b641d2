"""Feature preparation: light transform, hourly bins, gap filling, windows."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CHANNELS, DlmoError
from .ingest import MinuteSeries, ParticipantRecord

MAX_GAP_HOURS = 12
WINDOW_HOURS = 24


class DomainError(DlmoError, ValueError):
    pass


class MissingSleepRecord(DlmoError):
    pass


class ExcessiveGap(DlmoError):
    def __init__(self, channel, run_length):
        self.channel = channel
        self.run_length = run_length
        super().__init__(f"{channel}: missing run of {run_length} h exceeds "
                         f"{MAX_GAP_HOURS} h")


class InsufficientHistory(DlmoError):
    def __init__(self, available, required):
        self.available = available
        self.required = required
        super().__init__(f"{available} consecutive sleep days available, {required} needed")


@dataclass(frozen=True)
class HourlySeries:
    channel: str
    start: float
    values: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class DayWindow:
    participant: str
    wake_time: float
    channels: tuple
    features: np.ndarray = field(repr=False)  # (24, F)


@dataclass(frozen=True)
class MidpointWindow:
    """Day-referenced sleep midpoints T_1..T_n, oldest first."""

    participant: str
    midpoints: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.midpoints, dtype=float)
        if m.ndim != 1 or m.size == 0 or not np.all(np.isfinite(m)):
            raise ValueError("midpoints must be a non-empty finite 1-D sequence")
        object.__setattr__(self, "midpoints", m)

    @property
    def n(self):
        return self.midpoints.size


def log_transform_le(lux):
    """log10(lux + 1); works elementwise and keeps NaN as missing."""
    x = np.asarray(lux, dtype=float)
    if np.any(x[~np.isnan(x)] < 0):
        raise DomainError("lux must be >= 0")
    out = np.log10(x + 1.0)
    return float(out) if out.ndim == 0 else out


def _bin_means(values: np.ndarray, width: int = 60) -> np.ndarray:
    n = -(-values.size // width)
    padded = np.full(n * width, np.nan)
    padded[:values.size] = values
    blocks = padded.reshape(n, width)
    counts = np.sum(~np.isnan(blocks), axis=1)
    sums = np.nansum(blocks, axis=1)
    return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def hourly_bin(ms: MinuteSeries) -> HourlySeries:
    """Hourly means of present minutes, bins aligned to the series start."""
    return HourlySeries(ms.channel, ms.start, _bin_means(ms.values))


def missing_runs(values) -> list:
    """Maximal NaN runs as (start, length) pairs."""
    miss = np.isnan(np.asarray(values, dtype=float))
    edges = np.diff(np.concatenate(([0], miss.astype(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return [(int(a), int(b - a)) for a, b in zip(starts, stops)]


def fill_gaps(values, max_gap: int = MAX_GAP_HOURS) -> np.ndarray:
    """Linearly interpolate interior NaN runs no longer than ``max_gap``."""
    v = np.array(values, dtype=float)
    for start, length in missing_runs(v):
        stop = start + length
        if start == 0 or stop == v.size or length > max_gap:
            continue
        left, right = v[start - 1], v[stop]
        steps = np.arange(1, length + 1) / (length + 1)
        v[start:stop] = left + (right - left) * steps
    return v


def impute_gaps(hs: HourlySeries, max_gap_hours: int = MAX_GAP_HOURS) -> HourlySeries:
    return HourlySeries(hs.channel, hs.start, fill_gaps(hs.values, max_gap_hours))


def _channel_hours(record: ParticipantRecord, channel: str, start_minute: int,
                   n_hours: int) -> np.ndarray:
    ms = record.sensors.get(channel)
    if ms is None:
        return np.full(n_hours, np.nan)
    minutes = ms.window(start_minute, n_hours * 60)
    if channel == "LE":
        minutes = log_transform_le(minutes)
    return _bin_means(minutes)


def wake_minute(record: ParticipantRecord, day_index: int) -> int:
    sleep = record.sleep_by_day().get(day_index)
    if sleep is None:
        raise MissingSleepRecord(f"{record.id}: no sleep record ending on day {day_index}")
    return int(np.floor(sleep.offset * 60.0 + 1e-9))


def assemble_day_window(record: ParticipantRecord, label_day, channels=CHANNELS,
                        max_gap_hours: int = MAX_GAP_HOURS) -> DayWindow:
    """24 wake-relative hourly rows per selected channel, gaps filled.

    Bins are placed on a grid starting at the wake minute and extended by
    ``max_gap_hours`` on both sides, so a gap straddling the window edge is
    filled from data outside the window.  The window is rejected when any
    missing run touching it is longer than ``max_gap_hours``; with this much
    context an unbounded run always qualifies.
    """
    day = label_day if isinstance(label_day, int) else record.day_index(label_day)
    channels = tuple(channels)
    if not channels or any(c not in CHANNELS for c in channels):
        raise ValueError(f"bad channel selection {channels}")
    wake = wake_minute(record, day)
    pad = max_gap_hours
    total = WINDOW_HOURS + 2 * pad
    cols = []
    for ch in channels:
        hours = _channel_hours(record, ch, wake - pad * 60, total)
        for start, length in missing_runs(hours):
            if start < pad + WINDOW_HOURS and start + length > pad and length > max_gap_hours:
                raise ExcessiveGap(ch, length)
        cols.append(fill_gaps(hours, max_gap_hours)[pad:pad + WINDOW_HOURS])
    features = np.column_stack(cols)
    features.flags.writeable = False
    return DayWindow(record.id, wake / 60.0, channels, features)


def assemble_midpoint_window(record: ParticipantRecord, label_day, n: int = 7) -> MidpointWindow:
    """Midpoints of the ``n`` sleep episodes ending on days label_day-n+1 .. label_day."""
    if n < 1:
        raise ValueError("window size must be >= 1")
    day = label_day if isinstance(label_day, int) else record.day_index(label_day)
    by_day = record.sleep_by_day()
    available = 0
    while day - available in by_day:
        available += 1
    if available < n:
        raise InsufficientHistory(available, n)
    mids = [by_day[d].day_referenced_midpoint for d in range(day - n + 1, day + 1)]
    return MidpointWindow(record.id, np.array(mids))


@dataclass(frozen=True)
class SampleSet:
    """Model-ready arrays for every usable label.

    ``days`` has shape (N, 24, F), ``midpoints`` (N, n), ``y`` (N,).
    ``excluded`` maps a reason to the number of labels dropped for it.
    """

    participants: np.ndarray
    collection_days: tuple
    days: np.ndarray
    midpoints: np.ndarray
    y: np.ndarray
    channels: tuple
    n: int
    excluded: dict = field(default_factory=dict)

    def __len__(self):
        return self.y.size

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx)
        return SampleSet(self.participants[idx],
                         tuple(self.collection_days[i] for i in idx),
                         self.days[idx], self.midpoints[idx], self.y[idx],
                         self.channels, self.n, dict(self.excluded))

    def with_channels(self, channels) -> "SampleSet":
        pick = [self.channels.index(c) for c in channels]
        return SampleSet(self.participants, self.collection_days, self.days[:, :, pick],
                         self.midpoints, self.y, tuple(channels), self.n,
                         dict(self.excluded))


def build_samples(dataset, channels=CHANNELS, n: int = 7,
                  max_gap_hours: int = MAX_GAP_HOURS) -> SampleSet:
    """Assemble day and midpoint windows for every label, skipping unusable ones."""
    pids, days_, xs, ms, ys = [], [], [], [], []
    excluded = {"missing_sleep": 0, "excessive_gap": 0, "insufficient_history": 0}
    for rec in dataset.participants:
        for lab in rec.labels:
            try:
                win = assemble_day_window(rec, lab.collection_day, channels, max_gap_hours)
                mids = assemble_midpoint_window(rec, lab.collection_day, n)
            except MissingSleepRecord:
                excluded["missing_sleep"] += 1
                continue
            except ExcessiveGap:
                excluded["excessive_gap"] += 1
                continue
            except InsufficientHistory:
                excluded["insufficient_history"] += 1
                continue
            pids.append(rec.id)
            days_.append(lab.collection_day)
            xs.append(win.features)
            ms.append(mids.midpoints)
            ys.append(lab.phi)
    f = len(tuple(channels))
    return SampleSet(
        participants=np.array(pids, dtype=object),
        collection_days=tuple(days_),
        days=np.array(xs, dtype=float).reshape(len(xs), WINDOW_HOURS, f),
        midpoints=np.array(ms, dtype=float).reshape(len(ms), n),
        y=np.array(ys, dtype=float),
        channels=tuple(channels),
        n=n,
        excluded=excluded,
    )

