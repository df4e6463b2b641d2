import datetime as dt

import numpy as np
import pytest

from dlmo import synth
from dlmo.core import SleepRecord
from dlmo.ingest import MinuteSeries, ParticipantRecord


@pytest.fixture(scope="session")
def small_cohort():
    spec = synth.CohortSpec(n_participants=6, days_per_participant=10,
                            labels_per_participant=2, seed=11)
    return synth.generate_cohort(spec)


def make_record(n_days=3, wake_clock=7.0, le=None, st=None, ac=None, labels=(),
                pid="P1", anchor=dt.date(2016, 1, 4)):
    """Hand-built participant with one sleep episode ending on each day."""
    minutes = n_days * 1440
    rng = np.random.default_rng(0)
    le = rng.uniform(0, 500, minutes) if le is None else le
    st = rng.normal(33, 0.5, minutes) if st is None else st
    ac = rng.uniform(0, 1, minutes) if ac is None else ac
    sensors = {c: MinuteSeries(c, 0, v) for c, v in (("LE", le), ("ST", st), ("AC", ac))}
    sleep = tuple(SleepRecord(pid, d, 24 * d + wake_clock - 8, 24 * d + wake_clock)
                  for d in range(n_days))
    return ParticipantRecord(pid, anchor, sensors, sleep, (), tuple(labels))


def assert_same_dataset(a, b):
    assert a.ids == b.ids
    for p, q in zip(a.participants, b.participants):
        assert p.anchor == q.anchor
        assert p.sleep == q.sleep
        assert p.labels == q.labels
        assert set(p.sensors) == set(q.sensors)
        for ch in p.sensors:
            assert p.sensors[ch].start_minute == q.sensors[ch].start_minute
            np.testing.assert_array_equal(p.sensors[ch].values, q.sensors[ch].values)
        assert len(p.melatonin) == len(q.melatonin)
        for m, k in zip(p.melatonin, q.melatonin):
            assert m.collection_day == k.collection_day
            np.testing.assert_array_equal(m.times, k.times)
            np.testing.assert_array_equal(m.concentrations, k.concentrations)
