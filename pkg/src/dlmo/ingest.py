"""Reading and writing the on-disk CSV dataset.

Files (UTF-8, header row, empty field = missing value):

``sensors.csv``
    participant_id, date, time, dst_active, channel, value -- one row per
    minute per channel.  AC values are the acceleration magnitude.
``sensors_raw.csv`` (alternative to sensors.csv)
    participant_id, date, time, dst_active, channel, value, ac_x, ac_y, ac_z --
    device-rate rows (``time`` may carry fractional seconds).  AC rows leave
    ``value`` empty and give the three axes; rows are averaged per minute.
``sleep.csv``
    participant_id, day_index, onset_clock, offset_clock, dst_active
``melatonin.csv``
    participant_id, sample_clock (``YYYY-MM-DD HH:MM``), dst_active,
    concentration_pg_ml
``labels.csv``
    participant_id, collection_date, dlmo_hours [, status]

``day_index`` counts days from the participant's anchor day, the earliest
sensor date.  A sleep row's offset falls on ``anchor + day_index``; its onset
is the latest matching clock time before the offset.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .core import CHANNELS, DlmoError, DlmoLabel, SleepRecord
from .melatonin import MelatoninProfile

MINUTES_PER_DAY = 1440
RAW_RATE_HZ = 8


class ParseError(DlmoError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class ValidationError(DlmoError):
    def __init__(self, message, participant=None, path=None, line=None):
        self.participant = participant
        self.path = None if path is None else str(path)
        self.line = line
        where = ""
        if path is not None:
            where = f"{self.path}:{line}: " if line is not None else f"{self.path}: "
        who = f"participant {participant}: " if participant is not None else ""
        super().__init__(f"{where}{who}{message}")


@dataclass(frozen=True)
class MinuteSeries:
    """One channel at 1-minute cadence; NaN marks a missing minute."""

    channel: str
    start_minute: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ValueError(f"unknown channel {self.channel!r}")
        v = np.array(self.values, dtype=float)
        if np.any(np.isinf(v)):
            raise ValueError("infinite values are not allowed")
        if self.channel == "LE" and np.any(v[~np.isnan(v)] < 0):
            raise ValueError("LE values must be >= 0")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def start(self) -> float:
        return self.start_minute / 60.0

    def __len__(self):
        return self.values.size

    def window(self, start_minute: int, n_minutes: int) -> np.ndarray:
        """Copy of ``n_minutes`` values from ``start_minute``; NaN outside the record."""
        out = np.full(n_minutes, np.nan)
        lo = max(start_minute, self.start_minute)
        hi = min(start_minute + n_minutes, self.start_minute + self.values.size)
        if hi > lo:
            out[lo - start_minute:hi - start_minute] = self.values[
                lo - self.start_minute:hi - self.start_minute
            ]
        return out


@dataclass(frozen=True)
class ParticipantRecord:
    id: str
    anchor: dt.date
    sensors: dict  # channel -> MinuteSeries
    sleep: tuple  # SleepRecord, ordered by day_index
    melatonin: tuple = ()
    labels: tuple = ()

    def __post_init__(self):
        days = [s.day_index for s in self.sleep]
        if any(b <= a for a, b in zip(days, days[1:])):
            raise ValidationError("sleep records must be strictly ordered by day_index "
                                  "without duplicates", self.id)
        for label in self.labels:
            if not self.has_sensor_data_on(self.day_index(label.collection_day)):
                raise ValidationError(
                    f"no sensor data on collection day {label.collection_day}", self.id
                )

    def day_index(self, day: dt.date) -> int:
        return (day - self.anchor).days

    def sleep_by_day(self) -> dict:
        return {s.day_index: s for s in self.sleep}

    def has_sensor_data_on(self, day_index: int) -> bool:
        for ms in self.sensors.values():
            chunk = ms.window(day_index * MINUTES_PER_DAY, MINUTES_PER_DAY)
            if np.any(~np.isnan(chunk)):
                return True
        return False


@dataclass(frozen=True)
class Dataset:
    participants: tuple
    split_tag: str = "unsplit"

    def __post_init__(self):
        if self.split_tag not in ("train", "test", "unsplit"):
            raise ValueError(f"bad split tag {self.split_tag!r}")
        ids = [p.id for p in self.participants]
        if len(set(ids)) != len(ids):
            raise ValidationError("participant ids must be unique")

    def __getitem__(self, pid):
        for p in self.participants:
            if p.id == pid:
                return p
        raise KeyError(pid)

    @property
    def ids(self):
        return [p.id for p in self.participants]

    @property
    def n_labels(self):
        return sum(len(p.labels) for p in self.participants)


def ac_l2_norm(x, y, z):
    """Euclidean magnitude of a three-axis acceleration sample (vectorizes)."""
    return np.sqrt(np.square(x) + np.square(y) + np.square(z))


def downsample_8hz_to_minute(raw, channel: str, start_minute: int = 0,
                             rate_hz: int = RAW_RATE_HZ) -> MinuteSeries:
    """Average device-rate samples into minute values.

    ``raw`` starts on a minute boundary; NaN marks a dropped sample and a
    trailing partial minute is padded with NaN.  Minutes without any present
    sample become missing.
    """
    per_minute = 60 * rate_hz
    x = np.asarray(raw, dtype=float)
    n_min = -(-x.size // per_minute)
    padded = np.full(n_min * per_minute, np.nan)
    padded[:x.size] = x
    blocks = padded.reshape(n_min, per_minute)
    counts = np.sum(~np.isnan(blocks), axis=1)
    sums = np.nansum(blocks, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return MinuteSeries(channel, start_minute, means)


# --------------------------------------------------------------------------
# loading


def _read(path: Path, required: list) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise ParseError(path, "?", str(exc)) from exc
    except pd.errors.EmptyDataError as exc:
        raise ParseError(path, 1, "empty file, header row required") from exc
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise ParseError(path, 1, f"missing columns {missing}")
    return df


def _first_bad(mask, path, message):
    if mask.any():
        line = int(np.flatnonzero(np.asarray(mask))[0]) + 2
        raise ParseError(path, line, message)


def _parse_flag(df, col, path):
    s = df[col].str.strip()
    _first_bad(~s.isin(["0", "1"]), path, f"{col} must be 0 or 1")
    return s == "1"


def _parse_numbers(series: pd.Series, path, col, allow_empty=True):
    s = series.str.strip()
    empty = s == ""
    if not allow_empty:
        _first_bad(empty, path, f"{col} is required")
    vals = pd.to_numeric(s.where(~empty, None), errors="coerce").astype(float)
    _first_bad(~empty & vals.isna(), path, f"{col} is not a number")
    _first_bad(~empty & ~np.isfinite(vals.fillna(0.0)), path, f"{col} must be finite")
    return vals.to_numpy()


def _parse_datetimes(text: pd.Series, path, what, fmt=None):
    stamps = pd.to_datetime(text.str.strip(), format=fmt or "mixed", errors="coerce")
    _first_bad(stamps.isna(), path, f"malformed {what}")
    return stamps


def _minutes_from(stamps: pd.Series, dst: np.ndarray, anchors: pd.Series):
    """Whole minutes since each row's anchor midnight, DST removed."""
    shifted = stamps - pd.to_timedelta(dst.astype(int), unit="h")
    delta = shifted - anchors
    return delta


def _load_sensors(root: Path):
    plain, raw = root / "sensors.csv", root / "sensors_raw.csv"
    if plain.exists() and raw.exists():
        raise ValidationError("both sensors.csv and sensors_raw.csv present", path=root)
    if not plain.exists() and not raw.exists():
        raise ValidationError("sensors.csv not found", path=root)
    path = plain if plain.exists() else raw
    cols = ["participant_id", "date", "time", "dst_active", "channel", "value"]
    if path is raw:
        cols += ["ac_x", "ac_y", "ac_z"]
    df = _read(path, cols)
    pid = df["participant_id"].str.strip()
    _first_bad(pid == "", path, "empty participant_id")
    channel = df["channel"].str.strip()
    _first_bad(~channel.isin(CHANNELS), path, "channel must be LE, ST or AC")
    dst = _parse_flag(df, "dst_active", path).to_numpy()
    date = _parse_datetimes(df["date"], path, "date", "%Y-%m-%d")
    stamps = _parse_datetimes(df["date"].str.strip() + " " + df["time"].str.strip(),
                              path, "date/time")
    value = _parse_numbers(df["value"], path, "value")
    if path is raw:
        axes = [_parse_numbers(df[c], path, c) for c in ("ac_x", "ac_y", "ac_z")]
        is_ac = (channel == "AC").to_numpy()
        has_axes = ~np.isnan(axes[0]) & ~np.isnan(axes[1]) & ~np.isnan(axes[2])
        _first_bad(is_ac & ~np.isnan(value), path, "raw AC rows carry ac_x/ac_y/ac_z, not value")
        value = np.where(is_ac & has_axes, ac_l2_norm(*axes), value)

    anchors = date.groupby(pid).transform("min")
    delta = _minutes_from(stamps, dst, anchors)
    minutes = np.floor(delta.dt.total_seconds().to_numpy() / 60.0).astype(np.int64)
    frame = pd.DataFrame({"pid": pid, "channel": channel, "minute": minutes,
                          "value": value, "line": np.arange(len(df)) + 2})

    bad_le = (frame["channel"] == "LE") & (frame["value"] < 0)
    bad_ac = (frame["channel"] == "AC") & (frame["value"] < 0)
    bad = bad_le | bad_ac
    if bad.any():
        row = frame[bad].iloc[0]
        raise ValidationError(f"negative {row['channel']} value {row['value']}",
                              row["pid"], path, int(row["line"]))

    if path is raw:
        frame = (frame.groupby(["pid", "channel", "minute"], sort=True)["value"]
                 .mean().reset_index())
    else:
        dup = frame.duplicated(["pid", "channel", "minute"])
        if dup.any():
            row = frame[dup].iloc[0]
            raise ValidationError("duplicate minute", row["pid"], path, int(row["line"]))

    anchor_of = {p: a.date() for p, a in zip(pid, anchors)}
    series = {}
    for (p, ch), grp in frame.groupby(["pid", "channel"], sort=True):
        m = grp["minute"].to_numpy()
        lo = int(m.min())
        vals = np.full(int(m.max()) - lo + 1, np.nan)
        vals[m - lo] = grp["value"].to_numpy()
        series.setdefault(p, {})[ch] = MinuteSeries(ch, lo, vals)
    return series, anchor_of


def _clock(text: str):
    text = text.strip()
    for fmt in ("%H:%M:%S", "%H:%M"):
        try:
            return dt.datetime.strptime(text, fmt).time()
        except ValueError:
            pass
    return None


def _exact_hours(stamp: dt.datetime, anchor: dt.date) -> float:
    delta = stamp - dt.datetime.combine(anchor, dt.time())
    seconds = delta.days * 86400 + delta.seconds
    if seconds % 60 == 0:
        return (seconds // 60) / 60.0
    return seconds / 3600.0


def _load_sleep(path: Path, anchors: dict):
    df = _read(path, ["participant_id", "day_index", "onset_clock", "offset_clock",
                      "dst_active"])
    out = {}
    for i, row in enumerate(df.itertuples(index=False)):
        line = i + 2
        p = row.participant_id.strip()
        try:
            day = int(row.day_index)
        except ValueError:
            raise ParseError(path, line, "day_index must be an integer") from None
        on, off = _clock(row.onset_clock), _clock(row.offset_clock)
        if on is None or off is None:
            raise ParseError(path, line, "malformed onset/offset clock")
        if row.dst_active.strip() not in ("0", "1"):
            raise ParseError(path, line, "dst_active must be 0 or 1")
        if p not in anchors:
            raise ValidationError("sleep rows for a participant without sensor data", p,
                                  path, line)
        shift = dt.timedelta(hours=int(row.dst_active.strip()))
        wake_date = anchors[p] + dt.timedelta(days=day)
        offset = dt.datetime.combine(wake_date, off) - shift
        onset = dt.datetime.combine(wake_date, on) - shift
        if onset >= offset:
            onset -= dt.timedelta(days=1)
        try:
            rec = SleepRecord(p, day, _exact_hours(onset, anchors[p]),
                              _exact_hours(offset, anchors[p]))
        except ValueError as exc:
            raise ValidationError(str(exc), p, path, line) from None
        recs = out.setdefault(p, {})
        if day in recs:
            raise ValidationError(f"duplicate day_index {day}", p, path, line)
        recs[day] = rec
    return {p: tuple(recs[d] for d in sorted(recs)) for p, recs in out.items()}


def load_melatonin(path, anchors: dict | None = None) -> dict:
    """participant id -> tuple of MelatoninProfile, one per collection night."""
    path = Path(path)
    df = _read(path, ["participant_id", "sample_clock", "dst_active",
                      "concentration_pg_ml"])
    if df.empty:
        return {}
    pid = df["participant_id"].str.strip()
    dst = _parse_flag(df, "dst_active", path).to_numpy()
    stamps = _parse_datetimes(df["sample_clock"], path, "sample_clock")
    conc = _parse_numbers(df["concentration_pg_ml"], path, "concentration_pg_ml",
                          allow_empty=False)
    neg = conc < 0
    if neg.any():
        i = int(np.flatnonzero(neg)[0])
        raise ValidationError("negative concentration", pid.iloc[i], path, i + 2)
    shifted = stamps - pd.to_timedelta(dst.astype(int), unit="h")
    # a collection night runs afternoon to next morning; noon splits sessions
    session = (shifted - pd.Timedelta(hours=12)).dt.normalize()
    hours = (shifted - session).dt.total_seconds().to_numpy() / 3600.0
    frame = pd.DataFrame({"pid": pid, "session": session, "hours": hours, "conc": conc,
                          "line": np.arange(len(df)) + 2})
    out = {}
    for (p, day), grp in frame.groupby(["pid", "session"], sort=True):
        if anchors is not None and p not in anchors:
            raise ValidationError("melatonin rows for a participant without sensor data",
                                  p, path, int(grp["line"].iloc[0]))
        grp = grp.sort_values("hours", kind="stable")
        try:
            prof = MelatoninProfile(p, day.date(), grp["hours"].to_numpy(),
                                    grp["conc"].to_numpy())
        except ValueError as exc:
            raise ValidationError(str(exc), p, path, int(grp["line"].iloc[0])) from None
        out.setdefault(p, []).append(prof)
    return {p: tuple(v) for p, v in out.items()}


def load_labels(path: Path) -> dict:
    """participant id -> tuple of DlmoLabel; rows with a non-ok status are skipped."""
    df = _read(path, ["participant_id", "collection_date", "dlmo_hours"])
    status = df["status"].str.strip() if "status" in df.columns else None
    out = {}
    for i, row in enumerate(df.itertuples(index=False)):
        line = i + 2
        if status is not None and status.iloc[i] not in ("", "ok"):
            continue
        p = row.participant_id.strip()
        try:
            day = dt.date.fromisoformat(row.collection_date.strip())
        except ValueError:
            raise ParseError(path, line, "malformed collection_date") from None
        try:
            phi = float(row.dlmo_hours)
        except ValueError:
            raise ParseError(path, line, "dlmo_hours is not a number") from None
        if not math.isfinite(phi):
            raise ParseError(path, line, "dlmo_hours must be finite")
        try:
            label = DlmoLabel(p, day, phi)
        except ValueError as exc:
            raise ValidationError(str(exc), p, path, line) from None
        if any(x.collection_day == day for x in out.get(p, ())):
            raise ValidationError(f"duplicate label for {day}", p, path, line)
        out.setdefault(p, []).append(label)
    return {p: tuple(sorted(v, key=lambda x: x.collection_day)) for p, v in out.items()}


def load_dataset(root, split_tag: str = "unsplit") -> Dataset:
    """Parse and validate a dataset directory into the domain model."""
    root = Path(root)
    series, anchors = _load_sensors(root)
    sleep = _load_sleep(root / "sleep.csv", anchors)
    mel_path = root / "melatonin.csv"
    melatonin = load_melatonin(mel_path, anchors) if mel_path.exists() else {}
    lab_path = root / "labels.csv"
    labels = load_labels(lab_path) if lab_path.exists() else {}
    for p in labels:
        if p not in anchors:
            raise ValidationError("label for a participant without sensor data", p, lab_path)
    participants = []
    for p in sorted(anchors):
        participants.append(ParticipantRecord(
            id=p, anchor=anchors[p], sensors=series[p], sleep=sleep.get(p, ()),
            melatonin=melatonin.get(p, ()), labels=labels.get(p, ()),
        ))
    return Dataset(tuple(participants), split_tag)


# --------------------------------------------------------------------------
# writing


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else f"{x:.9g}"


def _clock_text(minutes: int) -> str:
    return f"{minutes // 60:02d}:{minutes % 60:02d}"


def _minute_of(hours: float) -> int:
    m = round(hours * 60.0)
    if m / 60.0 != hours:
        raise ValueError(f"{hours} h is not on the minute grid")
    return m


def write_dataset(ds: Dataset, root) -> None:
    """Write ``ds`` in the CSV layout read by :func:`load_dataset`.

    All clocks are written in standard time (``dst_active`` = 0).  Values are
    serialized with 9 significant digits, so data already rounded to 9
    digits round-trips exactly.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    frames = []
    for p in ds.participants:
        for ch in CHANNELS:
            ms = p.sensors.get(ch)
            if ms is None:
                continue
            minutes = ms.start_minute + np.arange(len(ms))
            day = minutes // MINUTES_PER_DAY
            dates = pd.to_datetime(p.anchor) + pd.to_timedelta(day, unit="D")
            mod = minutes % MINUTES_PER_DAY
            frames.append(pd.DataFrame({
                "participant_id": p.id,
                "date": dates.strftime("%Y-%m-%d"),
                "time": [f"{h:02d}:{m:02d}" for h, m in zip(mod // 60, mod % 60)],
                "dst_active": "0",
                "channel": ch,
                "value": [_fmt(v) for v in ms.values.tolist()],
            }))
    sensors = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=["participant_id", "date", "time", "dst_active", "channel", "value"])
    sensors.to_csv(root / "sensors.csv", index=False, lineterminator="\n")

    with open(root / "sleep.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("participant_id,day_index,onset_clock,offset_clock,dst_active\n")
        for p in ds.participants:
            for s in p.sleep:
                on = _minute_of(s.onset) % MINUTES_PER_DAY
                off = _minute_of(s.offset) % MINUTES_PER_DAY
                fh.write(f"{p.id},{s.day_index},{_clock_text(on)},{_clock_text(off)},0\n")

    with open(root / "melatonin.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("participant_id,sample_clock,dst_active,concentration_pg_ml\n")
        for p in ds.participants:
            for prof in p.melatonin:
                base = dt.datetime.combine(prof.collection_day, dt.time())
                for t, c in zip(prof.times.tolist(), prof.concentrations.tolist()):
                    stamp = base + dt.timedelta(minutes=_minute_of(t))
                    fh.write(f"{p.id},{stamp:%Y-%m-%d %H:%M},0,{_fmt(c)}\n")

    write_labels([lab for p in ds.participants for lab in p.labels], root / "labels.csv")


def write_labels(labels, path, statuses=None) -> None:
    """Write labels.csv; with ``statuses`` a status column is added and
    failed rows (label None) leave dlmo_hours empty."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if statuses is None:
            fh.write("participant_id,collection_date,dlmo_hours\n")
            for lab in labels:
                fh.write(f"{lab.participant},{lab.collection_day.isoformat()},"
                         f"{_fmt(lab.phi)}\n")
            return
        fh.write("participant_id,collection_date,dlmo_hours,status\n")
        for (pid, day, lab), status in zip(labels, statuses):
            value = "" if lab is None else _fmt(lab.phi)
            fh.write(f"{pid},{day.isoformat()},{value},{status}\n")
