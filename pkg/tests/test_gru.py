import json

import numpy as np
import pytest

from dlmo import gru
from dlmo.core import CHANNELS
from dlmo.mavg import MAConfig, MAParams, fit_least_squares
from dlmo.preprocess import SampleSet


def toy_samples(n=24, seed=0, channels=CHANNELS, light_weight=1.0):
    rng = np.random.default_rng(seed)
    days = rng.normal(0, 1, (n, 24, len(channels)))
    mids = rng.normal(27, 1, (n, 7))
    y = 0.1 * mids.sum(1) + 4.0 + light_weight * days[:, 12:16, 0].mean(1)
    pids = np.array([f"P{i:03d}" for i in range(n)], dtype=object)
    return SampleSet(pids, tuple(range(n)), days, mids, y, tuple(channels), 7, {})


def random_model(seed, ma_kind="EMA", H=4, channels=CHANNELS):
    rng = np.random.default_rng(seed)
    cfg = gru.GruConfig(hidden_size=H, channels=channels, seed=seed)
    ma_cfg = MAConfig(ma_kind) if ma_kind else None
    ma_params = MAParams(rng.normal(0, 0.2, ma_cfg.n_features), 1.5) if ma_kind else None
    stats = gru.Standardizer(np.zeros(len(channels)), np.ones(len(channels)), 24.0, 1.5)
    m = gru.init_model(cfg, ma_cfg, ma_params, stats, 0.3, rng)
    w = dict(m.weights)
    w["v"] = rng.normal(0, 1, H)
    return gru.TwoStepModel(ma_cfg, ma_params, cfg, w, stats)


def central_differences(model, days, mids, y, eps=1e-6):
    base = model.params()
    out = {}
    for k, v in base.items():
        g = np.zeros(np.size(v))
        flat = np.ravel(v).astype(float)
        for i in range(flat.size):
            vals = []
            for sign in (1, -1):
                f = flat.copy()
                f[i] += sign * eps
                p = dict(base)
                p[k] = f.reshape(np.shape(v))
                err = gru._run(model, p, days, mids) - y
                vals.append(np.mean(err * err))
            g[i] = (vals[0] - vals[1]) / (2 * eps)
        out[k] = g.reshape(np.shape(v))
    return out


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("ma_kind", ["EMA", "MA", None])
def test_gradients_match_finite_differences(seed, ma_kind):
    model = random_model(seed, ma_kind)
    s = toy_samples(5, seed)
    _, g = gru.loss_and_grads(model, s.days, s.midpoints, s.y)
    fd = central_differences(model, s.days, s.midpoints, s.y)
    assert set(g) == set(fd)
    for k in fd:
        scale = max(np.abs(fd[k]).max(), np.abs(g[k]).max(), 1e-8)
        assert np.abs(g[k] - fd[k]).max() / scale < 1e-4, k


def test_zero_loss_means_zero_gradients():
    model = random_model(3)
    s = toy_samples(6, 3)
    y = gru.predict_batch(model, s.days, s.midpoints)
    loss, g = gru.loss_and_grads(model, s.days, s.midpoints, y)
    assert loss == 0
    assert all(np.all(v == 0) for v in g.values())


def test_readout_bias_gradient_by_hand():
    model = random_model(4)
    s = toy_samples(6, 4)
    pred = gru.predict_batch(model, s.days, s.midpoints)
    _, g = gru.loss_and_grads(model, s.days, s.midpoints, s.y)
    assert g["c"][0] == pytest.approx(np.mean(2 * (pred - s.y)), abs=1e-12)


def test_cell_examples():
    H, D = 3, 5
    zero = {k: np.zeros((H, D)) for k in ("W_z", "W_r", "W_h")}
    zero.update({k: np.zeros((H, H)) for k in ("U_z", "U_r", "U_h")})
    zero.update({k: np.zeros(H) for k in ("b_z", "b_r", "b_h")})
    h = np.array([0.4, -0.2, 0.9])
    np.testing.assert_allclose(gru.gru_cell(h, np.ones(D), zero), 0.5 * h, atol=1e-15)

    rng = np.random.default_rng(0)
    w = {k: rng.normal(0, 1, v.shape) for k, v in zero.items()}
    u = rng.normal(0, 1, D)
    a = gru.gru_cell(np.zeros(H), u, w)
    w2 = dict(w, U_r=rng.normal(0, 5, (H, H)), b_r=rng.normal(0, 5, H), W_r=rng.normal(0, 5, (H, D)))
    np.testing.assert_array_equal(a, gru.gru_cell(np.zeros(H), u, w2))

    hs = rng.uniform(-0.999, 0.999, (200, H))
    out = gru.gru_cell(hs, rng.normal(0, 3, (200, D)), w)
    assert np.all(np.abs(out) < 1)
    with pytest.raises(gru.ShapeMismatch):
        gru.gru_cell(np.zeros(H + 1), u, w)


def test_constant_head():
    model = random_model(5)
    w = dict(model.weights, v=np.zeros(4), c=np.array([2.5]))
    m = gru.TwoStepModel(None, None, model.cfg, w, model.stats)
    s = toy_samples(4, 5)
    np.testing.assert_array_equal(gru.predict_batch(m, s.days, s.midpoints), np.full(4, 2.5))


def test_hour_order_matters_and_forward_is_pure():
    model = random_model(6)
    s = toy_samples(1, 6)
    day, win = s.days[0], s.midpoints[0]
    a = gru.forward(model, day, win)
    assert a == gru.forward(model, day.copy(), win.copy())
    assert a != gru.forward(model, day[::-1], win)
    with pytest.raises(gru.ShapeMismatch):
        gru.forward(model, day[:, :2], win)


def test_init_contract_without_training():
    s = toy_samples(30, 7)
    cfg = gru.GruConfig(hidden_size=8, max_epochs=0, finetune_epochs=0)
    m24, _ = gru.train_three_stage(s, cfg, ma_cfg=None)
    np.testing.assert_allclose(gru.predict_batch(m24, s.days, s.midpoints), s.y.mean(), atol=1e-12)
    mema, hist = gru.train_three_stage(s, cfg, MAConfig("EMA"))
    lin = fit_least_squares(s.midpoints, s.y, MAConfig("EMA"))
    np.testing.assert_array_equal(mema.ma_params.weights, lin.weights)
    assert mema.ma_params.intercept == lin.intercept
    from dlmo.mavg import predict
    np.testing.assert_allclose(gru.predict_batch(mema, s.days, s.midpoints),
                               predict(lin, s.midpoints, MAConfig("EMA")), atol=1e-9)
    assert hist.best_stage == 1


def test_stage_two_descends_full_batch():
    s = toy_samples(40, 8)
    cfg = gru.GruConfig(hidden_size=8, max_epochs=60, finetune_epochs=0, batch_size=0,
                        learning_rate_stage2=2e-3, validation_fraction=0.0)
    model, hist = gru.train_three_stage(s, cfg, MAConfig("EMA"))
    rm = np.array(hist.stage2_train_rmse)
    assert np.all(np.diff(rm) <= 1e-12)
    start = np.sqrt(np.mean((predict_ema(s) - s.y) ** 2))
    assert rm[-1] < start


def predict_ema(s):
    from dlmo.mavg import predict
    cfg = MAConfig("EMA")
    return predict(fit_least_squares(s.midpoints, s.y, cfg), s.midpoints, cfg)


def test_training_is_deterministic():
    s = toy_samples(20, 9)
    cfg = gru.GruConfig(hidden_size=6, max_epochs=5, finetune_epochs=3)
    a, _ = gru.train_three_stage(s, cfg)
    b, _ = gru.train_three_stage(s, cfg)
    assert json.dumps(gru.model_to_dict(a)) == json.dumps(gru.model_to_dict(b))


def test_channel_subset_training():
    s = toy_samples(20, 10)
    cfg = gru.GruConfig(hidden_size=4, channels=("LE", "ST"), max_epochs=2, finetune_epochs=1)
    model, _ = gru.train_three_stage(s, cfg)
    assert model.weights["W_z"].shape == (4, 4)
    pred = gru.predict_batch(model, s.days[:, :, :2], s.midpoints)
    assert pred.shape == (20,)


def test_parameter_count():
    m = random_model(0, "EMA", H=32)
    H, D = 32, 5
    assert m.n_trainable() == 3 * H * D + 3 * H * H + 3 * H + H + 1 + 2
    assert random_model(0, None, H=32).n_trainable() == 3 * H * D + 3 * H * H + 4 * H + 1


def test_save_load_round_trip(tmp_path):
    m = random_model(11, "MA")
    path = tmp_path / "model.json"
    gru.save_model(m, path)
    back = gru.load_model(path)
    s = toy_samples(5, 11)
    np.testing.assert_array_equal(gru.predict_batch(m, s.days, s.midpoints),
                                  gru.predict_batch(back, s.days, s.midpoints))


def test_truncated_and_invalid_files(tmp_path):
    m = random_model(12)
    path = tmp_path / "model.json"
    gru.save_model(m, path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(gru.SchemaVersionError):
        gru.load_model(path)
    d = gru.model_to_dict(m)
    d["gru_config"]["channels"] = ["LE", "HR", "AC"]
    with pytest.raises(gru.SchemaVersionError):
        gru.model_from_dict(d)
    d = gru.model_to_dict(m)
    d["schema_version"] = 99
    with pytest.raises(gru.SchemaVersionError):
        gru.model_from_dict(d)
    with pytest.raises(gru.ModelIoError):
        gru.load_model(tmp_path / "absent.json")
