"""Synthetic cohorts with known ground truth.

Latent phase follows a per-participant random walk.  Each day's DLMO is the
latent phase plus an acute shift proportional to that evening's light
deviation; a fraction ``light_carryover`` of the shift persists into the next
day's latent phase.  Sleep midpoints track the latent phase with Gaussian
noise.  Minute-level light, skin temperature and acceleration follow the
sleep/wake schedule, carry additive noise and contain injected gaps.
Melatonin profiles are built so that threshold interpolation on the hourly
assay grid recovers the true DLMO.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .core import DlmoError, DlmoLabel, SleepRecord
from .ingest import (MINUTES_PER_DAY, Dataset, MinuteSeries, ParticipantRecord,
                     write_dataset as _write_csvs)
from .melatonin import DEFAULT_THRESHOLD, MelatoninProfile

ASSAY_HOURS = np.arange(15.0, 32.0)  # 15:00 to 07:00 next morning


class SpecError(DlmoError, ValueError):
    def __init__(self, field_name, message):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass(frozen=True)
class CohortSpec:
    n_participants: int = 150
    days_per_participant: int = 11
    labels_per_participant: int = 1
    start_date: dt.date = dt.date(2016, 1, 4)
    phase_mean: float = 23.4
    phase_between_sd: float = 1.5
    phase_drift_sd: float = 0.25
    sleep_noise_sd: float = 0.5
    midpoint_offset: float = 4.0
    sleep_duration_mean: float = 7.5
    sleep_duration_sd: float = 0.5
    light_coupling: float = 1.2  # hours of DLMO shift per log10-lux of evening light
    light_carryover: float = 0.0
    evening_hours: float = 4.0
    evening_log_lux_mean: float = 1.8
    evening_log_lux_sd: float = 0.5
    day_log_lux_mean: float = 2.6
    day_log_lux_sd: float = 0.3
    le_noise_sd: float = 0.2  # log10 units
    st_noise_sd: float = 0.3
    ac_noise_sd: float = 0.1
    gap_rate_per_day: float = 0.3
    gap_mean_hours: float = 3.0
    melatonin_baseline: tuple = (0.5, 3.0)
    melatonin_peak: tuple = (15.0, 60.0)
    melatonin_rise_hours: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.start_date, str):
            object.__setattr__(self, "start_date", dt.date.fromisoformat(self.start_date))
        for name in ("melatonin_baseline", "melatonin_peak"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        self.validate()

    def validate(self):
        if self.n_participants < 1:
            raise SpecError("n_participants", "must be >= 1")
        if self.labels_per_participant < 0:
            raise SpecError("labels_per_participant", "must be >= 0")
        if self.days_per_participant < self.labels_per_participant + 2:
            raise SpecError("days_per_participant",
                            "need at least labels_per_participant + 2 days")
        for name in ("phase_between_sd", "phase_drift_sd", "sleep_noise_sd",
                     "sleep_duration_sd", "evening_log_lux_sd", "day_log_lux_sd",
                     "le_noise_sd", "st_noise_sd", "ac_noise_sd", "gap_rate_per_day",
                     "gap_mean_hours"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise SpecError(name, "must be finite and >= 0")
        if not 0 <= self.light_carryover <= 1:
            raise SpecError("light_carryover", "must lie in [0, 1]")
        if not 2 <= self.sleep_duration_mean <= 14:
            raise SpecError("sleep_duration_mean", "must lie in [2, 14] h")
        if not 0 < self.evening_hours < 10:
            raise SpecError("evening_hours", "must lie in (0, 10) h")
        lo, hi = self.melatonin_baseline
        if not 0 <= lo <= hi < DEFAULT_THRESHOLD:
            raise SpecError("melatonin_baseline",
                            f"range must satisfy 0 <= lo <= hi < {DEFAULT_THRESHOLD} pg/mL")
        plo, phi = self.melatonin_peak
        if not DEFAULT_THRESHOLD < plo <= phi:
            raise SpecError("melatonin_peak", f"range must lie above {DEFAULT_THRESHOLD} pg/mL")
        if self.melatonin_rise_hours <= 0:
            raise SpecError("melatonin_rise_hours", "must be > 0")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "CohortSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(mapping) - names)
        if unknown:
            raise SpecError(unknown[0], "unknown field")
        try:
            return cls(**mapping)
        except TypeError as exc:
            raise SpecError("spec", str(exc)) from exc


@dataclass(frozen=True)
class GroundTruth:
    """Per participant-day truth: ``rows`` is a tuple of
    (participant_id, day_index, latent_phase, true_midpoint, true_dlmo)."""

    rows: tuple


def melatonin_profile_values(dlmo: float, baseline: float, peak: float, rise: float,
                             times=ASSAY_HOURS, threshold: float = DEFAULT_THRESHOLD):
    """Logistic rise sampled at ``times`` whose piecewise-linear interpolant
    crosses ``threshold`` exactly at ``dlmo``."""
    times = np.asarray(times, dtype=float)
    k = int(np.searchsorted(times, dlmo, side="right")) - 1
    if k < 1 or k >= times.size - 1:
        raise SpecError("dlmo", f"{dlmo} h leaves no sub-threshold sample before onset")
    frac = (dlmo - times[k]) / (times[k + 1] - times[k])

    def level(c):
        m = baseline + (peak - baseline) * expit((times[k:k + 2] - c) / rise)
        return m[0] + frac * (m[1] - m[0]) - threshold

    center = brentq(level, dlmo - 40.0 * rise - 2.0, dlmo + 40.0 * rise + 2.0,
                    xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    return baseline + (peak - baseline) * expit((times - center) / rise)


def _minutes(hours):
    return np.rint(np.asarray(hours) * 60.0).astype(np.int64)


def _gaps(n_minutes, spec: CohortSpec, rng) -> np.ndarray:
    miss = np.zeros(n_minutes, dtype=bool)
    n_gaps = rng.poisson(spec.gap_rate_per_day * n_minutes / MINUTES_PER_DAY)
    if n_gaps == 0 or spec.gap_mean_hours == 0:
        return miss
    starts = rng.integers(0, n_minutes, n_gaps)
    lengths = np.ceil(rng.exponential(spec.gap_mean_hours * 60.0, n_gaps)).astype(np.int64)
    for s, n in zip(starts, lengths):
        miss[s:s + n] = True
    return miss


def _participant(i: int, spec: CohortSpec, rng):
    pid = f"P{i:03d}"
    D = spec.days_per_participant
    n_min = D * MINUTES_PER_DAY

    # latent phase and same-day DLMO, both in hours after that day's midnight
    light_dev = rng.normal(0.0, spec.evening_log_lux_sd, D)
    shift = spec.light_coupling * light_dev
    drift = rng.normal(0.0, spec.phase_drift_sd, D)
    latent = np.empty(D)
    latent[0] = spec.phase_mean + rng.normal(0.0, spec.phase_between_sd)
    for d in range(1, D):
        latent[d] = latent[d - 1] + drift[d] + spec.light_carryover * shift[d - 1]
    latent = np.clip(np.round(latent * 60.0) / 60.0, 17.0, 29.0)
    dlmo = np.round(np.clip(latent + shift, 16.5, 30.0), 6)

    # night ending on day d: midpoint T_d hours after midnight of day d-1
    true_mid = latent + spec.midpoint_offset
    mid_min = _minutes(true_mid + rng.normal(0.0, spec.sleep_noise_sd, D)) \
        + (np.arange(D) - 1) * MINUTES_PER_DAY
    dur = np.clip(rng.normal(spec.sleep_duration_mean, spec.sleep_duration_sd, D), 3.0, 12.0)
    half = _minutes(dur / 2.0)
    onset_min, offset_min = mid_min - half, mid_min + half
    # one more night closes the last study day
    extra_mid = _minutes(latent[-1] + spec.midpoint_offset) + (D - 1) * MINUTES_PER_DAY
    extra_half = _minutes(spec.sleep_duration_mean / 2.0)
    sleep_on = np.append(onset_min, extra_mid - extra_half)
    sleep_off = np.append(offset_min, extra_mid + extra_half)

    asleep = np.zeros(n_min, dtype=bool)
    evening = np.full(n_min, -1)
    for k, (a, b) in enumerate(zip(sleep_on, sleep_off)):
        asleep[max(a, 0):max(min(b, n_min), 0)] = True
        if k >= 1:  # evening preceding this night belongs to study day k-1
            e0 = a - int(round(spec.evening_hours * 60))
            evening[max(e0, 0):max(min(a, n_min), 0)] = k - 1

    minute_day = np.arange(n_min) // MINUTES_PER_DAY
    day_level = rng.normal(spec.day_log_lux_mean, spec.day_log_lux_sd, D)
    log_lux = day_level[minute_day]
    in_evening = evening >= 0
    log_lux[in_evening] = spec.evening_log_lux_mean + light_dev[evening[in_evening]]
    log_lux = np.clip(log_lux + rng.normal(0.0, spec.le_noise_sd, n_min), 0.0, 4.5)
    lux = np.where(asleep, 0.0, 10.0 ** log_lux - 1.0)
    st = np.where(asleep, 35.0, 33.0) + rng.normal(0.0, spec.st_noise_sd, n_min)
    ac = np.abs(np.where(asleep, 0.05, 1.0) + rng.normal(0.0, spec.ac_noise_sd, n_min)
                * np.where(asleep, 0.2, 1.0))
    sensors = {}
    for ch, vals in (("LE", lux), ("ST", st), ("AC", ac)):
        vals = np.round(vals, 4)
        vals[_gaps(n_min, spec, rng)] = np.nan
        sensors[ch] = MinuteSeries(ch, 0, vals)

    sleep = tuple(SleepRecord(pid, d, onset_min[d] / 60.0, offset_min[d] / 60.0)
                  for d in range(D))

    label_days = range(D - 1 - spec.labels_per_participant, D - 1)
    labels, profiles = [], []
    for d in label_days:
        day = spec.start_date + dt.timedelta(days=d)
        labels.append(DlmoLabel(pid, day, float(dlmo[d])))
        base = rng.uniform(*spec.melatonin_baseline)
        peak = rng.uniform(*spec.melatonin_peak)
        conc = melatonin_profile_values(dlmo[d], base, peak, spec.melatonin_rise_hours)
        profiles.append(MelatoninProfile(pid, day, ASSAY_HOURS.copy(), np.round(conc, 4)))

    truth = tuple((pid, d, round(float(latent[d]), 6), round(float(true_mid[d]), 6),
                   float(dlmo[d])) for d in range(D))
    rec = ParticipantRecord(pid, spec.start_date, sensors, sleep, tuple(profiles),
                            tuple(labels))
    return rec, truth


def generate_cohort(spec: CohortSpec, split_tag: str = "unsplit"):
    """Return ``(Dataset, GroundTruth)``; deterministic for a given spec."""
    spec.validate()
    streams = np.random.SeedSequence(spec.seed).spawn(spec.n_participants)
    records, truth = [], []
    for i, ss in enumerate(streams):
        rec, rows = _participant(i, spec, np.random.default_rng(ss))
        records.append(rec)
        truth.extend(rows)
    return Dataset(tuple(records), split_tag), GroundTruth(tuple(truth))


def write_dataset(ds: Dataset, gt: GroundTruth, root) -> None:
    """Write the ingest CSV files plus ``ground_truth.csv``."""
    root = Path(root)
    _write_csvs(ds, root)
    with open(root / "ground_truth.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("participant_id,day_index,latent_phase_hours,true_midpoint_hours,"
                 "true_dlmo_hours\n")
        for pid, d, latent, mid, dlmo in gt.rows:
            fh.write(f"{pid},{d},{latent:.9g},{mid:.9g},{dlmo:.9g}\n")
