import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dlmo import evaluation as ev
from dlmo.gru import GruConfig
from dlmo.preprocess import SampleSet, build_samples

from test_gru import toy_samples

TINY = GruConfig(hidden_size=4, max_epochs=3, finetune_epochs=2)


def test_rmse_examples():
    assert ev.rmse_val([1.0, 1.0, 1.0]) == 1.0
    assert ev.rmse_val([3.0, 4.0]) == math.sqrt(12.5)
    assert ev.rmse([1.0, -1.0]) == 1.0
    with pytest.raises(ev.EmptyInput):
        ev.rmse([])


def test_lt1h_examples():
    assert ev.lt1h([0.5, -0.99, 1.5]) == 2 / 3
    assert ev.lt1h([0.0, 0.0]) == 1.0
    assert ev.lt1h([1.0]) == 0.0
    assert ev.lt1h([-1.0, np.nextafter(1.0, 0.0)]) == 0.5


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=50))
def test_lt1h_is_a_fraction(r):
    assert 0.0 <= ev.lt1h(r) <= 1.0


def test_r_squared_examples():
    y = np.array([20.0, 22.5, 23.0, 25.0])
    assert ev.r_squared(y, y) == 1.0
    assert ev.r_squared(y, np.full(4, y.mean())) == 0.0
    assert ev.r_squared([0, 1, 2], [0, 0, 2]) == 0.5
    with pytest.raises(ev.DegenerateTarget):
        ev.r_squared([1, 1], [1, 2])


def test_aic_examples():
    assert ev.aic(10.0, 10, 3) == 6.0
    assert ev.aic(10 * math.e, 10, 3) == pytest.approx(16.0, abs=1e-12)
    assert ev.aic(5.0, 8, 6) - ev.aic(5.0, 8, 3) == pytest.approx(6.0, abs=1e-12)
    with pytest.raises(ev.DomainError):
        ev.aic(0.0, 10, 1)


def test_variance_factors():
    s, e = ev.variance_ratio_check(2, 0.9)
    assert s == 0.5
    assert e == pytest.approx(1.81 / 3.61, abs=1e-15)
    for n in range(2, 9):
        s, e = ev.variance_ratio_check(n, 1.0)
        assert abs(s - e) < 1e-12
    with pytest.raises(ev.DomainError):
        ev.variance_ratio_check(3, 1.5)


@given(st.integers(2, 8), st.floats(0.01, 0.999))
def test_ema_factor_exceeds_sma(n, alpha):
    s, e = ev.variance_ratio_check(n, alpha)
    assert e > s


def test_monte_carlo_factors():
    # the 2% band is about two standard errors of a variance from 20,000 draws
    s, e = ev.monte_carlo_variances(7, 0.9, 1.0, 20_000)
    fs, fe = ev.variance_ratio_check(7, 0.9)
    assert abs(s / fs - 1) < 0.02 and abs(e / fe - 1) < 0.02


def test_folds():
    lopo = ev.make_folds([f"P{i}" for i in range(5)], "lopo")
    assert lopo.k == 5 and sorted(lopo.assignments.values()) == list(range(5))
    ids = [f"P{i:02d}" for i in range(20)]
    a = ev.make_folds(ids, "kfold", seed=3, k=10)
    assert a == ev.make_folds(list(reversed(ids)), "kfold", seed=3, k=10)
    sizes = np.bincount(list(a.assignments.values()))
    assert sizes.tolist() == [2] * 10
    groups = ["P00"] * 3 + ids[1:]
    for tr, va in a.split(groups):
        assert not set(np.array(groups)[tr]) & set(np.array(groups)[va])
    assert len({a.assignments["P00"]}) == 1
    with pytest.raises(ev.TooFewParticipants):
        ev.make_folds(ids[:5], "kfold", k=10)
    assert ev.parse_cv("kfold:4", ids).k == 4
    assert ev.parse_cv("lopo", ids).k == 20
    with pytest.raises(ValueError):
        ev.parse_cv("holdout", ids)


def test_model_names():
    assert ev.ModelSpec("ema").name == "EMA"
    assert ev.ModelSpec("rnn-24h").name == "RNN_24-hour"
    assert ev.ModelSpec("rnn-ema", gru=GruConfig(channels=("LE", "ST"))).name == "RNN_EMA^(LE,ST)"
    assert ev.ModelSpec("rnn-24h").ma_cfg is None
    with pytest.raises(ValueError):
        ev.ModelSpec("lstm")


def _cohort_samples(small_cohort):
    ds, _ = small_cohort
    return ds, build_samples(ds)


def test_smoke_comparison_and_reports(small_cohort, tmp_path):
    ds, s = _cohort_samples(small_cohort)
    plan = ev.make_folds(s, "kfold", seed=0, k=3)
    specs = [ev.ModelSpec("ema"), ev.ModelSpec("rnn-24h", gru=TINY)]
    reports = ev.run_model_comparison(s, specs, plan, test=s)
    assert [r.model for r in reports] == ["EMA", "RNN_24-hour"]
    for r in reports:
        assert len(r.fold_rmse) == 3
        assert r.rmse_val == pytest.approx(ev.rmse_val(r.fold_rmse))
        assert r.rmse_test is not None
    ev.write_reports(reports, tmp_path)
    header = (tmp_path / "comparison.csv").read_text().splitlines()[0]
    assert header.split(",")[:5] == ["model", "window", "n_samples", "n_excluded", "RMSE_val"]
    assert len(json.loads((tmp_path / "comparison.json").read_text())) == 2


def test_feature_sweep_counts_parameters(small_cohort):
    _, s = _cohort_samples(small_cohort)
    plan = ev.make_folds(s, "kfold", seed=0, k=2)
    reports = ev.feature_combination_sweep(s, plan, ev.ModelSpec("rnn-ema", gru=TINY))
    assert len(reports) == 7
    H = TINY.hidden_size
    for r in reports:
        D = r.model.count(",") + 1 + 2 if "^" in r.model else 5
        assert r.n_params == 3 * H * D + 3 * H * H + 4 * H + 1 + 2
        assert r.aic is not None


def test_window_sweep(small_cohort):
    ds, s = _cohort_samples(small_cohort)
    reports = ev.window_size_sweep(ds, [3, 7, 9], ("SMA", "EMA"), cv="kfold:3")
    by = {(r.model, r.window): r for r in reports}
    ref = ev.evaluate_spec(ev.ModelSpec("ema"), s, ev.parse_cv("kfold:3", s))
    assert by[("EMA", 7)].summary() == ref.summary()
    assert by[("EMA", 9)].n_excluded > by[("EMA", 7)].n_excluded
    with pytest.raises(ValueError):
        ev.window_size_sweep(ds, [30])


def _linear_set(n=40, seed=0, spread=0.0):
    """Midpoint windows with a common per-row level, so every average is linear in y."""
    rng = np.random.default_rng(seed)
    T = rng.normal(27, 1.5, (n, 1)) + spread * rng.normal(0, 1, (n, 7))
    y = T.mean(1) - 3.5
    pids = np.array([f"P{i}" for i in range(n)], dtype=object)
    return SampleSet(pids, tuple(range(n)), np.zeros((n, 24, 3)), T, y, ("LE", "ST", "AC"), 7)


def test_noise_zero_sigma_exact_fit():
    res = ev.noise_experiment(_linear_set(), ev.NoiseConfig((0.0,), 5))
    for m in ("SMA", "EMA", "MA"):
        np.testing.assert_allclose(res.r2[(0.0, m)], 1.0, atol=1e-10)


def test_noise_ma_dominates_each_rep():
    s = _linear_set(60, 1, spread=0.5)
    res = ev.noise_experiment(s, ev.NoiseConfig((0.5, 2.0), 50, seed=4))
    for sig in (0.5, 2.0):
        ma = res.r2[(sig, "MA")]
        assert np.all(ma >= res.r2[(sig, "SMA")] - 1e-12)
        assert np.all(ma >= res.r2[(sig, "EMA")] - 1e-12)


def test_noise_single_feature_identity_matches_lstsq():
    rng = np.random.default_rng(2)
    f = rng.normal(0, 1, (4, 30))
    y = rng.normal(0, 1, 30)
    fast = ev._r2_single_feature(f, y)
    slow = [ev._r2_lstsq(row[:, None], y) for row in f]
    np.testing.assert_allclose(fast, slow, atol=1e-12)


def test_noise_sigma_streams_are_independent_of_grid():
    s = _linear_set(30, 3, spread=0.5)
    a = ev.noise_experiment(s, ev.NoiseConfig((0.0, 1.0, 2.0), 20, seed=5))
    b = ev.noise_experiment(s, ev.NoiseConfig((0.0, 1.0), 20, seed=5))
    np.testing.assert_array_equal(a.r2[(1.0, "EMA")], b.r2[(1.0, "EMA")])


def test_noise_config_validation():
    with pytest.raises(ValueError):
        ev.NoiseConfig((-1.0,))
    with pytest.raises(ValueError):
        ev.NoiseConfig(repetitions=0)


def test_fixed_protocol_runs():
    res = ev.noise_experiment(_linear_set(), ev.NoiseConfig((0.0, 1.0), 10, protocol="fixed"))
    assert res.mean(0.0, "EMA") == pytest.approx(1.0, abs=1e-10)
    assert res.mean(1.0, "EMA") < 1.0


def test_history_only_cohort_gives_sensors_nothing_to_add():
    from dlmo import synth
    ds, _ = synth.generate_cohort(synth.CohortSpec(n_participants=80, light_coupling=0.0, seed=1))
    s = build_samples(ds)
    plan = ev.make_folds(s, "kfold", 0, 5)
    gcfg = GruConfig(max_epochs=100, finetune_epochs=30)
    ema, rnn = ev.run_model_comparison(s, [ev.ModelSpec("ema"), ev.ModelSpec("rnn-ema", gru=gcfg)],
                                       plan)
    assert abs(rnn.rmse_val - ema.rmse_val) < 0.05
