"""Metrics, grouped cross-validation, model comparisons and noise experiments."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import gru, mavg
from .core import CHANNELS, DlmoError
from .gru import GruConfig
from .mavg import MAConfig

MODEL_KINDS = ("sma", "ema", "ma", "rnn-sma", "rnn-ema", "rnn-ma", "rnn-24h")


class EmptyInput(DlmoError, ValueError):
    pass


class DegenerateTarget(DlmoError, ValueError):
    pass


class TooFewParticipants(DlmoError, ValueError):
    pass


class DomainError(DlmoError, ValueError):
    pass


# --------------------------------------------------------------------------
# metrics


def rmse(residuals) -> float:
    r = np.asarray(residuals, dtype=float)
    if r.size == 0:
        raise EmptyInput("no residuals")
    return float(np.sqrt(np.mean(r * r)))


def rmse_val(fold_rmses) -> float:
    """Root mean square of per-fold RMSEs."""
    return rmse(fold_rmses)


def lt1h(residuals) -> float:
    """Fraction of absolute errors strictly below one hour."""
    r = np.asarray(residuals, dtype=float)
    if r.size == 0:
        raise EmptyInput("no residuals")
    return float(np.count_nonzero(np.abs(r) < 1.0) / r.size)


def r_squared(y_true, y_pred) -> float:
    y = np.asarray(y_true, dtype=float)
    p = np.asarray(y_pred, dtype=float)
    if y.size < 2 or y.shape != p.shape:
        raise DegenerateTarget("need >= 2 paired samples")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        raise DegenerateTarget("target is constant")
    return 1.0 - float(np.sum((y - p) ** 2)) / ss_tot


def aic(rss: float, n_samples: int, k_params: int) -> float:
    """Gaussian-likelihood AIC: n ln(RSS/n) + 2k."""
    if not rss > 0 or n_samples < 1:
        raise DomainError("AIC needs rss > 0 and n_samples >= 1")
    return n_samples * math.log(rss / n_samples) + 2 * k_params


def variance_ratio_check(n: int, alpha: float):
    """Noise-variance factors of the simple and exponential averages.

    Returns ``(1/n, sum(alpha**(2i)) / sum(alpha**i)**2)`` for i = 0..n-1;
    multiply by sigma**2 to get the variance of each average of i.i.d.
    N(0, sigma**2) readings.
    """
    if n < 1 or not 0 < alpha <= 1:
        raise DomainError("need n >= 1 and 0 < alpha <= 1")
    w = alpha ** np.arange(n, dtype=float)
    return 1.0 / n, float(np.sum(w * w) / np.sum(w) ** 2)


def monte_carlo_variances(n: int, alpha: float, sigma: float = 1.0, draws: int = 20_000,
                          seed: int = 0):
    """Sample variances of the simple and exponential averages of noise draws."""
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, (draws, n))
    w = alpha ** np.arange(n, dtype=float)
    sma = noise.mean(axis=1)
    ema = noise @ w / w.sum()
    return float(np.var(sma, ddof=1)), float(np.var(ema, ddof=1))


# --------------------------------------------------------------------------
# folds


@dataclass(frozen=True)
class FoldPlan:
    scheme: str  # "lopo" or "kfold"
    k: int
    assignments: dict  # participant id -> fold index
    seed: int = 0

    def split(self, groups):
        """(train_idx, val_idx) pairs over samples labelled by ``groups``."""
        fold_of = np.array([self.assignments[str(g)] for g in groups])
        return [(np.flatnonzero(fold_of != f), np.flatnonzero(fold_of == f))
                for f in range(self.k)]

    def label(self) -> str:
        return "lopo" if self.scheme == "lopo" else f"kfold:{self.k}"


def make_folds(participants, scheme: str = "kfold", seed: int = 0, k: int = 10) -> FoldPlan:
    """Grouped partition of participants; ``participants`` may be ids,
    a Dataset or a SampleSet."""
    if hasattr(participants, "ids"):
        ids = participants.ids
    elif hasattr(participants, "participants") and hasattr(participants, "y"):
        ids = participants.participants
    else:
        ids = participants
    ids = sorted({str(p) for p in ids})
    scheme = scheme.lower()
    if scheme == "lopo":
        if len(ids) < 2:
            raise TooFewParticipants("LOPO needs at least 2 participants")
        return FoldPlan("lopo", len(ids), {p: i for i, p in enumerate(ids)}, seed)
    if scheme != "kfold":
        raise ValueError(f"unknown CV scheme {scheme!r}")
    if k < 2 or len(ids) < k:
        raise TooFewParticipants(f"{k}-fold CV needs at least {k} participants, "
                                 f"got {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    return FoldPlan("kfold", k, {ids[j]: pos % k for pos, j in enumerate(order)}, seed)


def parse_cv(text: str, participants, seed: int = 0) -> FoldPlan:
    text = text.strip().lower()
    if text == "lopo":
        return make_folds(participants, "lopo", seed)
    if text.startswith("kfold"):
        k = int(text.split(":", 1)[1]) if ":" in text else 10
        return make_folds(participants, "kfold", seed, k)
    raise ValueError(f"unknown CV scheme {text!r}")


# --------------------------------------------------------------------------
# model specs


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "rnn-ema"
    n: int = 7
    alpha: float = 0.9
    gru: GruConfig = GruConfig()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.lower())
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not self.name:
            object.__setattr__(self, "name", self.default_name())

    def default_name(self) -> str:
        if not self.is_rnn:
            return self.kind.upper()
        base = "RNN_24-hour" if self.kind == "rnn-24h" else "RNN_" + self.kind[4:].upper()
        if tuple(self.gru.channels) != CHANNELS:
            base += "^(" + ",".join(self.gru.channels) + ")"
        return base

    @property
    def is_rnn(self) -> bool:
        return self.kind.startswith("rnn")

    @property
    def ma_cfg(self) -> MAConfig | None:
        if self.kind == "rnn-24h":
            return None
        return MAConfig(self.kind.split("-")[-1].upper(), self.n, self.alpha)


@dataclass
class FittedModel:
    spec: ModelSpec
    linear: mavg.MAParams | None = None
    rnn: gru.TwoStepModel | None = None
    history: object = None

    def predict(self, samples) -> np.ndarray:
        if self.rnn is None:
            return mavg.predict(self.linear, samples.midpoints, self.spec.ma_cfg)
        days = samples.days[:, :, [samples.channels.index(c) for c in self.rnn.cfg.channels]]
        return gru.predict_batch(self.rnn, days, samples.midpoints)

    @property
    def n_params(self) -> int:
        if self.rnn is None:
            return self.spec.ma_cfg.n_params
        return self.rnn.n_trainable()


def fit_model(spec: ModelSpec, samples, seed_offset=None) -> FittedModel:
    if samples.n != spec.n and spec.kind != "rnn-24h":
        raise ValueError(f"samples built with n={samples.n}, spec needs n={spec.n}")
    if not spec.is_rnn:
        return FittedModel(spec, linear=mavg.fit_least_squares(samples.midpoints, samples.y,
                                                               spec.ma_cfg))
    cfg = spec.gru
    if seed_offset is not None:
        derived = np.random.SeedSequence([cfg.seed, seed_offset]).generate_state(1)[0]
        cfg = replace(cfg, seed=int(derived))
    model, history = gru.train_three_stage(samples, cfg, spec.ma_cfg)
    return FittedModel(spec, rnn=model, history=history)


# --------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    model: str
    cv: str
    fold_rmse: list
    rmse_val: float
    lt1h_fraction: float
    rmse_all: float | None = None
    rmse_test: float | None = None
    lt1h_test: float | None = None
    aic: float | None = None
    n_params: int | None = None
    n_samples: int = 0
    n_excluded: int = 0
    window: int | None = None
    residuals: list = field(default_factory=list)  # (participant, day, split, y, pred)

    def summary(self) -> dict:
        return {
            "model": self.model, "cv": self.cv, "window": self.window,
            "n_samples": self.n_samples, "n_excluded": self.n_excluded,
            "rmse_val": self.rmse_val, "rmse_all": self.rmse_all,
            "rmse_test": self.rmse_test, "lt1h": self.lt1h_fraction,
            "lt1h_test": self.lt1h_test, "aic": self.aic, "n_params": self.n_params,
            "fold_rmse": list(self.fold_rmse),
        }


def cross_validate(spec: ModelSpec, samples, plan: FoldPlan):
    """Per-fold RMSEs and out-of-fold predictions (folds with no samples skipped)."""
    pred = np.full(len(samples), np.nan)
    fold_rmses = []
    for f, (tr, va) in enumerate(plan.split(samples.participants)):
        if va.size == 0:
            continue
        fitted = fit_model(spec, samples.subset(tr), seed_offset=f)
        pred[va] = fitted.predict(samples.subset(va))
        fold_rmses.append(rmse(samples.y[va] - pred[va]))
    return fold_rmses, pred


def evaluate_spec(spec: ModelSpec, samples, plan: FoldPlan, test=None,
                  full_fit: bool | None = None) -> EvalReport:
    """Cross-validated metrics, plus full-training-set fit metrics (RMSE_all,
    AIC, and RMSE_test when a test set is given)."""
    fold_rmses, pred = cross_validate(spec, samples, plan)
    rep = EvalReport(
        model=spec.name, cv=plan.label(), fold_rmse=fold_rmses,
        rmse_val=rmse_val(fold_rmses), lt1h_fraction=lt1h(samples.y - pred),
        n_samples=len(samples), n_excluded=int(sum(samples.excluded.values())),
        window=None if spec.kind == "rnn-24h" else spec.n,
    )
    rep.residuals = [(str(p), d.isoformat(), "val", float(y), float(q))
                     for p, d, y, q in zip(samples.participants, samples.collection_days,
                                           samples.y, pred)]
    if full_fit is None:
        full_fit = test is not None or not spec.is_rnn
    if full_fit:
        full = fit_model(spec, samples)
        res = samples.y - full.predict(samples)
        rss = float(res @ res)
        rep.rmse_all = rmse(res)
        rep.n_params = full.n_params
        rep.aic = aic(rss, len(samples), full.n_params) if rss > 0 else None
        if test is not None and len(test):
            tp = full.predict(test)
            rep.rmse_test = rmse(test.y - tp)
            rep.lt1h_test = lt1h(test.y - tp)
            rep.residuals += [(str(p), d.isoformat(), "test", float(y), float(q))
                              for p, d, y, q in zip(test.participants, test.collection_days,
                                                    test.y, tp)]
    return rep


def run_model_comparison(samples, specs, plan: FoldPlan, test=None):
    """Evaluate each spec on the same folds (and test split, if any)."""
    return [evaluate_spec(s, samples, plan, test) for s in specs]


def channel_subsets(channels=CHANNELS):
    out = []
    for r in range(1, len(channels) + 1):
        out.extend(itertools.combinations(channels, r))
    return out


def feature_combination_sweep(samples, plan: FoldPlan, base: ModelSpec = ModelSpec("rnn-ema"),
                              subsets=None, test=None):
    """One two-step variant per channel subset, each with AIC from the full fit."""
    reports = []
    for sub in subsets or channel_subsets():
        spec = ModelSpec(base.kind, base.n, base.alpha, replace(base.gru, channels=tuple(sub)))
        reports.append(evaluate_spec(spec, samples, plan, test, full_fit=True))
    return reports


def window_size_sweep(dataset, sizes=range(3, 9), kinds=("SMA", "EMA", "MA"),
                      cv: str = "lopo", seed: int = 0, alpha: float = 0.9,
                      channels=CHANNELS):
    """Cross-validated linear models for each history length.

    Labels lacking ``n`` nights of history are dropped for that size and
    show up in ``n_excluded`` alongside the other exclusion reasons.
    """
    from .preprocess import build_samples

    sizes = list(sizes)
    longest = _longest_history(dataset)
    bad = [n for n in sizes if n < 1 or n > longest]
    if bad:
        raise ValueError(f"window sizes {bad} outside 1..{longest}")
    reports = []
    for n in sizes:
        samples = build_samples(dataset, channels=channels, n=n)
        plan = parse_cv(cv, samples, seed)
        reports.extend(evaluate_spec(ModelSpec(kind, n, alpha), samples, plan)
                       for kind in kinds)
    return reports


def _longest_history(dataset) -> int:
    best = 0
    for rec in dataset.participants:
        days = {s.day_index for s in rec.sleep}
        for lab in rec.labels:
            d, k = rec.day_index(lab.collection_day), 0
            while d - k in days:
                k += 1
            best = max(best, k)
    return best


# --------------------------------------------------------------------------
# noise experiment


@dataclass(frozen=True)
class NoiseConfig:
    sigma_grid: tuple = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0)
    repetitions: int = 2000
    seed: int = 0
    protocol: str = "refit"  # or "fixed": clean-data coefficients, noisy features
    alpha: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "sigma_grid", tuple(float(s) for s in self.sigma_grid))
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if any(not math.isfinite(s) or s < 0 for s in self.sigma_grid):
            raise ValueError("sigmas must be finite and >= 0")
        if self.protocol not in ("refit", "fixed"):
            raise ValueError(f"unknown protocol {self.protocol!r}")


@dataclass
class NoiseResult:
    sigmas: tuple
    models: tuple
    r2: dict  # (sigma, model) -> array of r^2 over repetitions

    def summary(self):
        rows = []
        for s in self.sigmas:
            for m in self.models:
                x = self.r2[(s, m)]
                q = [float(v) for v in np.quantile(x, [0.05, 0.25, 0.5, 0.75, 0.95])]
                rows.append({"sigma": s, "model": m, "reps": int(x.size),
                             "mean_r2": float(x.mean()),
                             "sd_r2": float(x.std(ddof=1)) if x.size > 1 else 0.0,
                             "q05": q[0], "q25": q[1], "q50": q[2], "q75": q[3],
                             "q95": q[4]})
        return rows

    def mean(self, sigma, model) -> float:
        return float(self.r2[(float(sigma), model)].mean())


def _r2_single_feature(f, y):
    """In-sample r^2 of y ~ a f + b for each row of f (reps, N)."""
    fc = f - f.mean(axis=1, keepdims=True)
    yc = y - y.mean()
    sxx = np.einsum("rn,rn->r", fc, fc)
    sxy = fc @ yc
    syy = yc @ yc
    out = np.zeros(f.shape[0])
    ok = sxx > 1e-12 * np.maximum(1.0, np.abs(f).max(axis=1)) ** 2
    out[ok] = sxy[ok] ** 2 / (sxx[ok] * syy)
    return out


def noise_experiment(samples, cfg: NoiseConfig = NoiseConfig(), kinds=("SMA", "EMA", "MA")):
    """Distribution of r^2 between true DLMO and moving-average predictions
    when every midpoint is perturbed by i.i.d. N(0, sigma^2) noise.

    Each sigma draws from its own seed-derived stream, so results do not
    depend on the order or subset of sigmas evaluated.
    """
    T = np.asarray(samples.midpoints, dtype=float)
    y = np.asarray(samples.y, dtype=float)
    N, n = T.shape
    if np.var(y) == 0:
        raise DegenerateTarget("target is constant")
    cfgs = {k: MAConfig(k, n, cfg.alpha) for k in kinds}
    clean = {k: mavg.fit_least_squares(T, y, c) for k, c in cfgs.items()}
    r2 = {}
    for si, sigma in enumerate(cfg.sigma_grid):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, si]))
        noisy = T[None] + sigma * rng.standard_normal((cfg.repetitions, N, n))
        for kind, mc in cfgs.items():
            if cfg.protocol == "fixed":
                pred = np.stack([mavg.predict(clean[kind], x, mc) for x in noisy])
                ss_tot = np.sum((y - y.mean()) ** 2)
                r2[(sigma, kind)] = 1.0 - np.sum((pred - y) ** 2, axis=1) / ss_tot
            elif kind == "MA":
                r2[(sigma, kind)] = np.array([_r2_lstsq(x, y) for x in noisy])
            else:
                r2[(sigma, kind)] = _r2_single_feature(noisy @ mc.weights(), y)
    return NoiseResult(cfg.sigma_grid, tuple(kinds), r2)


def _r2_lstsq(X, y):
    A = np.column_stack([X, np.ones(y.size)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    return 1.0 - float(res @ res) / float(np.sum((y - y.mean()) ** 2))


# --------------------------------------------------------------------------
# output files


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def _write_rows(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def write_reports(reports, out_dir, stem: str = "comparison") -> None:
    """Table-shaped CSV, per-fold long CSV, residual CSV and a JSON summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / f"{stem}.csv",
                ["model", "window", "n_samples", "n_excluded", "RMSE_val", "RMSE_all",
                 "RMSE_test", "lt1h", "AIC", "n_params"],
                [[r.model, r.window, r.n_samples, r.n_excluded, r.rmse_val, r.rmse_all,
                  r.rmse_test, r.lt1h_fraction, r.aic, r.n_params] for r in reports])
    _write_rows(out / f"{stem}_folds.csv", ["model", "window", "fold", "rmse"],
                [[r.model, r.window, i, v] for r in reports for i, v in enumerate(r.fold_rmse)])
    _write_rows(out / f"{stem}_residuals.csv",
                ["model", "window", "participant_id", "collection_date", "split", "dlmo",
                 "predicted", "residual"],
                [[r.model, r.window, p, d, s, y, q, y - q] for r in reports
                 for p, d, s, y, q in r.residuals])
    (out / f"{stem}.json").write_text(
        json.dumps([r.summary() for r in reports], indent=1) + "\n", encoding="utf-8")


def write_noise_result(result: NoiseResult, out_dir, stem: str = "noise") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = result.summary()
    keys = ["sigma", "model", "reps", "mean_r2", "sd_r2", "q05", "q25", "q50", "q75", "q95"]
    _write_rows(out / f"{stem}.csv", keys, [[float(r[k]) if isinstance(r[k], np.floating)
                                             else r[k] for k in keys] for r in rows])
    (out / f"{stem}.json").write_text(
        json.dumps([{k: (float(v) if isinstance(v, np.floating) else v) for k, v in r.items()}
                    for r in rows], indent=1) + "\n", encoding="utf-8")
