"""DLMO extraction from salivary melatonin profiles."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .core import DlmoError, DlmoLabel

DEFAULT_THRESHOLD = 5.0  # pg/mL


class NoOnset(DlmoError):
    pass


class AlreadyAbove(DlmoError):
    pass


class TooFewSamples(DlmoError):
    pass


@dataclass(frozen=True)
class MelatoninProfile:
    """Assay samples for one collection night.

    ``times`` are hours after midnight of ``collection_day`` (a 01:00 sample
    the next morning is 25.0).
    """

    participant: str
    collection_day: dt.date
    times: np.ndarray = field(repr=False)
    concentrations: np.ndarray = field(repr=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        c = np.asarray(self.concentrations, dtype=float)
        if t.shape != c.shape or t.ndim != 1:
            raise ValueError("times and concentrations must be equal-length 1-D")
        if np.any(np.diff(t) <= 0):
            raise ValueError(f"{self.participant}: sample times not strictly increasing")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise ValueError(f"{self.participant}: concentrations must be finite and >= 0")
        t.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "concentrations", c)


def first_crossing(times, values, threshold: float) -> float:
    """Time at which ``values`` first reach ``threshold`` from below.

    Linear interpolation between the bracketing samples.  A sample lying
    exactly on the threshold returns its own time, which also covers flat
    segments at the threshold.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.size < 2:
        raise TooFewSamples(f"need at least 2 samples, got {t.size}")
    if v[0] >= threshold:
        raise AlreadyAbove(f"first sample {v[0]} already at/above {threshold}")
    hits = np.flatnonzero(v >= threshold)
    if hits.size == 0:
        raise NoOnset(f"profile never reaches {threshold}")
    k = hits[0]
    if v[k] == threshold:
        return float(t[k])
    t0, t1 = t[k - 1], t[k]
    v0, v1 = v[k - 1], v[k]
    return float(t0 + (threshold - v0) * (t1 - t0) / (v1 - v0))


def extract_dlmo(profile: MelatoninProfile, threshold: float = DEFAULT_THRESHOLD) -> DlmoLabel:
    phi = first_crossing(profile.times, profile.concentrations, threshold)
    return DlmoLabel(profile.participant, profile.collection_day, phi)
