"""Two-step DLMO model: moving-average phase summary fed into a GRU.

Each of the 24 wake-relative hours feeds the cell ``[h/24, psi_std, x_h]``,
where ``psi_std`` is the phase summary standardized by the training DLMO
mean/std and ``x_h`` the standardized hourly sensor features.  The final
hidden state is read out linearly and added to ``psi``::

    phi_hat = v . h_24 + c + psi

so the readout learns a correction to the moving-average estimate.  With
``v = 0`` and ``c = 0`` the model returns ``psi`` exactly.  The sensor-only
baseline uses no moving-average model and sets ``psi = 0``.

Everything is float64 numpy with hand-written backpropagation through time.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import mavg
from .core import CHANNELS, DlmoError
from .mavg import MAConfig, MAParams

SCHEMA_VERSION = 1
N_HOURS = 24
GRU_PARAMS = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h", "v", "c")
MA_PARAMS = ("ma_w", "ma_b")


class ShapeMismatch(DlmoError, ValueError):
    pass


class NonFiniteLoss(DlmoError, ArithmeticError):
    def __init__(self, stage, epoch):
        self.stage = stage
        self.epoch = epoch
        super().__init__(f"non-finite loss in stage {stage}, epoch {epoch}")


class SchemaVersionError(DlmoError, ValueError):
    pass


class ModelIoError(DlmoError, OSError):
    pass


@dataclass(frozen=True)
class GruConfig:
    hidden_size: int = 32
    channels: tuple = CHANNELS
    learning_rate_stage2: float = 1e-3
    learning_rate_stage3: float = 1e-4
    max_epochs: int = 300
    finetune_epochs: int = 100
    early_stop_patience: int = 40
    batch_size: int = 32  # 0 means full batch
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be >= 1")
        if self.learning_rate_stage2 <= 0 or self.learning_rate_stage3 <= 0:
            raise ValueError("learning rates must be > 0")
        if not self.channels or any(c not in CHANNELS for c in self.channels):
            raise ValueError(f"bad channel selection {self.channels}")
        if len(set(self.channels)) != len(self.channels):
            raise ValueError("duplicate channels")
        if self.max_epochs < 0 or self.finetune_epochs < 0:
            raise ValueError("epoch counts must be >= 0")

    @property
    def input_size(self) -> int:
        return len(self.channels) + 2


@dataclass(frozen=True)
class Standardizer:
    feature_mean: np.ndarray
    feature_std: np.ndarray
    phi_mean: float
    phi_std: float

    def __post_init__(self):
        if np.any(np.asarray(self.feature_std) <= 0) or self.phi_std <= 0:
            raise ValueError("standardization stds must be > 0")

    @classmethod
    def fit(cls, days, y):
        flat = np.asarray(days, dtype=float).reshape(-1, np.shape(days)[-1])
        std = flat.std(axis=0)
        phi_std = float(np.std(y))
        return cls(flat.mean(axis=0), np.where(std > 0, std, 1.0),
                   float(np.mean(y)), phi_std if phi_std > 0 else 1.0)


@dataclass(frozen=True)
class TwoStepModel:
    """Moving-average step (``ma_cfg`` None means psi = 0) plus GRU weights."""

    ma_cfg: MAConfig | None
    ma_params: MAParams | None
    cfg: GruConfig
    weights: dict = field(repr=False)
    stats: Standardizer = field(repr=False)

    def __post_init__(self):
        H, D = self.cfg.hidden_size, self.cfg.input_size
        shapes = {"W_z": (H, D), "W_r": (H, D), "W_h": (H, D), "U_z": (H, H),
                  "U_r": (H, H), "U_h": (H, H), "b_z": (H,), "b_r": (H,), "b_h": (H,),
                  "v": (H,), "c": (1,)}
        for k, s in shapes.items():
            if np.shape(self.weights.get(k)) != s:
                raise ShapeMismatch(f"{k} has shape {np.shape(self.weights.get(k))}, "
                                    f"expected {s}")
        F = len(self.cfg.channels)
        if np.shape(self.stats.feature_mean) != (F,) or np.shape(self.stats.feature_std) != (F,):
            raise ShapeMismatch("standardization stats do not match channels")
        if (self.ma_cfg is None) != (self.ma_params is None):
            raise ValueError("ma_cfg and ma_params must both be set or both be None")

    @property
    def uses_psi(self) -> bool:
        return self.ma_cfg is not None

    def params(self) -> dict:
        """All trainable tensors, moving-average ones included."""
        p = dict(self.weights)
        if self.uses_psi:
            p["ma_w"] = self.ma_params.weights
            p["ma_b"] = np.array([self.ma_params.intercept])
        return p

    def with_params(self, p: dict) -> "TwoStepModel":
        weights = {k: np.array(p[k], dtype=float) for k in GRU_PARAMS}
        ma_params = self.ma_params
        if self.uses_psi and "ma_w" in p:
            ma_params = MAParams(np.array(p["ma_w"], dtype=float), float(p["ma_b"][0]))
        return replace(self, weights=weights, ma_params=ma_params)

    def n_trainable(self) -> int:
        return int(sum(np.size(v) for v in self.params().values()))


def gru_cell(h, u, w: dict):
    """One GRU step for a single vector or a batch of row vectors."""
    h = np.asarray(h, dtype=float)
    u = np.asarray(u, dtype=float)
    H = w["U_z"].shape[0]
    if h.shape[-1] != H or u.shape[-1] != w["W_z"].shape[1]:
        raise ShapeMismatch(f"h {h.shape} / u {u.shape} incompatible with weights")
    z = expit(u @ w["W_z"].T + h @ w["U_z"].T + w["b_z"])
    r = expit(u @ w["W_r"].T + h @ w["U_r"].T + w["b_r"])
    hc = np.tanh(u @ w["W_h"].T + (r * h) @ w["U_h"].T + w["b_h"])
    return (1.0 - z) * h + z * hc


def init_model(cfg: GruConfig, ma_cfg: MAConfig | None, ma_params: MAParams | None,
               stats: Standardizer, readout_bias: float, rng=None) -> TwoStepModel:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) recurrent weights.

    The readout weights start at zero, so an untrained model predicts
    ``psi + readout_bias`` exactly; gradients reach the GRU from the first
    update onwards.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    H, D = cfg.hidden_size, cfg.input_size
    bound = 1.0 / np.sqrt(H)
    w = {}
    for k in ("W_z", "W_r", "W_h"):
        w[k] = rng.uniform(-bound, bound, (H, D))
    for k in ("U_z", "U_r", "U_h"):
        w[k] = rng.uniform(-bound, bound, (H, H))
    for k in ("b_z", "b_r", "b_h"):
        w[k] = rng.uniform(-bound, bound, H)
    w["v"] = np.zeros(H)
    w["c"] = np.array([float(readout_bias)])
    return TwoStepModel(ma_cfg, ma_params, cfg, w, stats)


# --------------------------------------------------------------------------
# forward / backward


def _psi(model: TwoStepModel, p: dict, mids):
    if not model.uses_psi:
        return np.zeros(len(mids)), None
    feats = mavg.feature_matrix(mids, model.ma_cfg)
    return feats @ p["ma_w"] + p["ma_b"][0], feats


def _inputs(model: TwoStepModel, days, psi):
    days = np.asarray(days, dtype=float)
    B = days.shape[0]
    if days.shape[1:] != (N_HOURS, len(model.cfg.channels)):
        raise ShapeMismatch(f"day windows have shape {days.shape[1:]}, expected "
                            f"({N_HOURS}, {len(model.cfg.channels)})")
    st = model.stats
    u = np.empty((B, N_HOURS, model.cfg.input_size))
    u[:, :, 0] = np.arange(N_HOURS) / N_HOURS
    u[:, :, 1] = ((psi - st.phi_mean) / st.phi_std)[:, None]
    u[:, :, 2:] = (days - st.feature_mean) / st.feature_std
    return u


def _run(model: TwoStepModel, p: dict, days, mids, keep=False):
    psi, feats = _psi(model, p, mids)
    u = _inputs(model, days, psi)
    B = u.shape[0]
    H = model.cfg.hidden_size
    Wx = u @ np.concatenate([p["W_z"], p["W_r"], p["W_h"]]).T \
        + np.concatenate([p["b_z"], p["b_r"], p["b_h"]])
    U_zr = np.concatenate([p["U_z"], p["U_r"]]).T
    U_hT = p["U_h"].T
    hs = np.zeros((B, N_HOURS + 1, H))
    if keep:
        zs, rs, hcs = (np.empty((B, N_HOURS, H)) for _ in range(3))
    h = hs[:, 0]
    for t in range(N_HOURS):
        gates = expit(Wx[:, t, :2 * H] + h @ U_zr)
        z, r = gates[:, :H], gates[:, H:]
        hc = np.tanh(Wx[:, t, 2 * H:] + (r * h) @ U_hT)
        h = (1.0 - z) * h + z * hc
        hs[:, t + 1] = h
        if keep:
            zs[:, t], rs[:, t], hcs[:, t] = z, r, hc
    out = (h @ p["v"] + p["c"][0]) + psi
    if not keep:
        return out
    return out, dict(psi=psi, feats=feats, u=u, hs=hs, z=zs, r=rs, hc=hcs)


def predict_batch(model: TwoStepModel, days, mids) -> np.ndarray:
    return _run(model, model.params(), days, mids)


def forward(model: TwoStepModel, day, win) -> float:
    """DLMO estimate for one day window and one midpoint window."""
    features = getattr(day, "features", day)
    mids = getattr(win, "midpoints", win)
    if model.uses_psi and np.size(mids) != model.ma_cfg.n:
        raise ShapeMismatch(f"midpoint window of {np.size(mids)}, model needs {model.ma_cfg.n}")
    return float(_run(model, model.params(), np.asarray(features)[None],
                      np.atleast_2d(mids))[0])


def loss_and_grads(model: TwoStepModel, days, mids, y, p: dict | None = None):
    """Mean squared error and its exact gradient for every trainable tensor."""
    p = model.params() if p is None else p
    y = np.asarray(y, dtype=float)
    out, c = _run(model, p, days, mids, keep=True)
    B = y.size
    err = out - y
    loss = float(err @ err / B)
    dout = 2.0 * err / B
    hs, zs, rs, hcs, u = c["hs"], c["z"], c["r"], c["hc"], c["u"]
    H = model.cfg.hidden_size
    g = {"v": hs[:, -1].T @ dout, "c": np.array([dout.sum()])}
    da = np.empty((B, N_HOURS, 3 * H))
    dh = np.outer(dout, p["v"])
    U_z, U_r, U_h = p["U_z"], p["U_r"], p["U_h"]
    for t in range(N_HOURS - 1, -1, -1):
        h_prev, z, r, hc = hs[:, t], zs[:, t], rs[:, t], hcs[:, t]
        dz = dh * (hc - h_prev)
        da_h = dh * z * (1.0 - hc * hc)
        d_rh = da_h @ U_h
        da_z = dz * z * (1.0 - z)
        da_r = d_rh * h_prev * r * (1.0 - r)
        dh = dh * (1.0 - z) + d_rh * r + da_z @ U_z + da_r @ U_r
        da[:, t, :H], da[:, t, H:2 * H], da[:, t, 2 * H:] = da_z, da_r, da_h
    DA_z, DA_r, DA_h = da[:, :, :H], da[:, :, H:2 * H], da[:, :, 2 * H:]
    h_prev_all = hs[:, :-1]
    g["W_z"] = np.einsum("bth,btd->hd", DA_z, u)
    g["W_r"] = np.einsum("bth,btd->hd", DA_r, u)
    g["W_h"] = np.einsum("bth,btd->hd", DA_h, u)
    g["U_z"] = np.einsum("bth,btk->hk", DA_z, h_prev_all)
    g["U_r"] = np.einsum("bth,btk->hk", DA_r, h_prev_all)
    g["U_h"] = np.einsum("bth,btk->hk", DA_h, rs * h_prev_all)
    g["b_z"] = DA_z.sum(axis=(0, 1))
    g["b_r"] = DA_r.sum(axis=(0, 1))
    g["b_h"] = DA_h.sum(axis=(0, 1))
    if model.uses_psi:
        W_psi = np.stack([p["W_z"][:, 1], p["W_r"][:, 1], p["W_h"][:, 1]])  # (3, H)
        du_psi = np.einsum("btgh,gh->b", da.reshape(B, N_HOURS, 3, H), W_psi)
        dpsi = dout + du_psi / model.stats.phi_std
        g["ma_w"] = c["feats"].T @ dpsi
        g["ma_b"] = np.array([dpsi.sum()])
    return loss, g


def backward(model: TwoStepModel, days, mids, y) -> dict:
    return loss_and_grads(model, days, mids, y)[1]


# --------------------------------------------------------------------------
# training


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params: dict, grads: dict, keys) -> dict:
        self.t += 1
        out = dict(params)
        for k in keys:
            g = grads[k]
            m = self.m[k] = self.beta1 * self.m.get(k, 0.0) + (1 - self.beta1) * g
            v = self.v[k] = self.beta2 * self.v.get(k, 0.0) + (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            out[k] = params[k] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return out


@dataclass
class TrainingHistory:
    stage2_train_rmse: list = field(default_factory=list)
    stage2_val_rmse: list = field(default_factory=list)
    stage3_train_rmse: list = field(default_factory=list)
    stage3_val_rmse: list = field(default_factory=list)
    best_stage: int = 1
    best_epoch: int = 0
    best_val_rmse: float = float("nan")


def split_validation(groups, fraction: float, rng) -> np.ndarray:
    """Boolean mask of samples held out for early stopping, grouped by participant."""
    ids = np.unique(np.asarray(groups, dtype=str))
    if fraction <= 0 or ids.size < 2:
        return np.zeros(len(groups), dtype=bool)
    k = min(max(1, int(round(fraction * ids.size))), ids.size - 1)
    held = set(rng.choice(ids, size=k, replace=False).tolist())
    return np.array([str(g) in held for g in groups])


def _rmse(model, p, days, mids, y):
    err = _run(model, p, days, mids) - y
    return float(np.sqrt(np.mean(err * err)))


def _stage(model, p, keys, lr, epochs, data, val, patience, rng, batch_size, stage, best,
           history_train, history_val):
    days, mids, y = data
    opt = Adam(lr)
    since_best = 0
    N = y.size
    bs = N if batch_size <= 0 else min(batch_size, N)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(N)
        for s in range(0, N, bs):
            idx = order[s:s + bs]
            loss, g = loss_and_grads(model, days[idx], mids[idx], y[idx], p)
            if not np.isfinite(loss):
                raise NonFiniteLoss(stage, epoch)
            p = opt.step(p, g, keys)
        train_rmse = _rmse(model, p, days, mids, y)
        if not np.isfinite(train_rmse):
            raise NonFiniteLoss(stage, epoch)
        val_rmse = _rmse(model, p, *val) if val is not None else train_rmse
        history_train.append(train_rmse)
        history_val.append(val_rmse)
        if val_rmse < best["rmse"]:
            best.update(rmse=val_rmse, params=p, stage=stage, epoch=epoch)
            since_best = 0
        else:
            since_best += 1
            if patience and since_best >= patience:
                break
    return p


def train_three_stage(samples, cfg: GruConfig, ma_cfg: MAConfig | None = MAConfig()):
    """Fit a two-step model on a :class:`~dlmo.preprocess.SampleSet`.

    Stage 1 fits the moving-average model by least squares.  Stage 2 trains
    the GRU and readout with the moving-average parameters frozen.  Stage 3
    fine-tunes every parameter at the lower learning rate.  The parameters
    with the lowest internal-validation RMSE across stages are returned.
    Pass ``ma_cfg=None`` for the sensor-only model (psi = 0).
    """
    from .mavg import InsufficientData

    if len(samples) == 0:
        raise InsufficientData("empty training split")
    data_channels = tuple(samples.channels)
    days = samples.days[:, :, [data_channels.index(ch) for ch in cfg.channels]]
    mids, y = samples.midpoints, samples.y

    ma_params = None
    if ma_cfg is not None:
        ma_params = mavg.fit_least_squares(mids, y, ma_cfg)
    stats = Standardizer.fit(days, y)
    rng = np.random.default_rng(cfg.seed)
    probe = TwoStepModel(ma_cfg, ma_params, cfg, _zero_weights(cfg), stats)
    psi = _psi(probe, probe.params(), mids)[0]
    model = init_model(cfg, ma_cfg, ma_params, stats, float(np.mean(y - psi)), rng)

    held = split_validation(samples.participants, cfg.validation_fraction, rng)
    fit_idx = np.flatnonzero(~held)
    data = (days[fit_idx], mids[fit_idx], y[fit_idx])
    val = (days[held], mids[held], y[held]) if held.any() else None

    history = TrainingHistory()
    p = model.params()
    start = _rmse(model, p, *val) if val is not None else _rmse(model, p, *data)
    best = dict(rmse=start, params=p, stage=1, epoch=0)
    p = _stage(model, p, GRU_PARAMS, cfg.learning_rate_stage2, cfg.max_epochs, data, val,
               cfg.early_stop_patience, rng, cfg.batch_size, 2, best,
               history.stage2_train_rmse, history.stage2_val_rmse)
    keys = GRU_PARAMS + (MA_PARAMS if ma_cfg is not None else ())
    _stage(model, best["params"], keys, cfg.learning_rate_stage3, cfg.finetune_epochs, data,
           val, cfg.early_stop_patience, rng, cfg.batch_size, 3, best,
           history.stage3_train_rmse, history.stage3_val_rmse)
    history.best_stage, history.best_epoch = best["stage"], best["epoch"]
    history.best_val_rmse = best["rmse"]
    return model.with_params(best["params"]), history


def _zero_weights(cfg: GruConfig) -> dict:
    H, D = cfg.hidden_size, cfg.input_size
    w = {k: np.zeros((H, D)) for k in ("W_z", "W_r", "W_h")}
    w.update({k: np.zeros((H, H)) for k in ("U_z", "U_r", "U_h")})
    w.update({k: np.zeros(H) for k in ("b_z", "b_r", "b_h", "v")})
    w["c"] = np.zeros(1)
    return w


# --------------------------------------------------------------------------
# persistence


def model_to_dict(model: TwoStepModel) -> dict:
    cfg = asdict(model.cfg)
    cfg["channels"] = list(model.cfg.channels)
    return {
        "schema_version": SCHEMA_VERSION,
        "ma": None if model.ma_cfg is None else mavg.to_dict(model.ma_cfg, model.ma_params),
        "gru_config": cfg,
        "weights": {k: {"shape": list(np.shape(v)), "data": np.ravel(v).tolist()}
                    for k, v in model.weights.items()},
        "standardization": {
            "feature_mean": np.asarray(model.stats.feature_mean).tolist(),
            "feature_std": np.asarray(model.stats.feature_std).tolist(),
            "phi_mean": model.stats.phi_mean,
            "phi_std": model.stats.phi_std,
        },
    }


def model_from_dict(d: dict) -> TwoStepModel:
    if not isinstance(d, dict) or d.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionError(f"unsupported schema_version {d.get('schema_version')!r}"
                                 if isinstance(d, dict) else "model file is not an object")
    try:
        gc = dict(d["gru_config"])
        unknown = [c for c in gc["channels"] if c not in CHANNELS]
        if unknown:
            raise SchemaVersionError(f"unknown channel tags {unknown}")
        gc["channels"] = tuple(gc["channels"])
        cfg = GruConfig(**gc)
        ma_cfg = ma_params = None
        if d["ma"] is not None:
            ma_cfg, ma_params = mavg.from_dict(d["ma"])
        weights = {k: np.array(v["data"], dtype=float).reshape(v["shape"])
                   for k, v in d["weights"].items()}
        s = d["standardization"]
        stats = Standardizer(np.array(s["feature_mean"], dtype=float),
                             np.array(s["feature_std"], dtype=float),
                             float(s["phi_mean"]), float(s["phi_std"]))
        return TwoStepModel(ma_cfg, ma_params, cfg, weights, stats)
    except SchemaVersionError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaVersionError(f"invalid model file: {exc}") from exc


def save_model(model: TwoStepModel, path) -> None:
    path = Path(path)
    text = json.dumps(model_to_dict(model), indent=1)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise ModelIoError(str(exc)) from exc


def load_model(path) -> TwoStepModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelIoError(str(exc)) from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaVersionError(f"truncated or malformed model file: {exc}") from exc
    return model_from_dict(d)
