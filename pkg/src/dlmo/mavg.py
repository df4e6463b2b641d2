"""Linear moving-average models from past sleep midpoints to a phase summary.

Three model kinds share one affine form ``psi = params . features(T) + b``:

* SMA -- a single feature, the sum of the window;
* EMA -- a single feature, ``sum(alpha**(n-i) * T_i)`` with T_n the most
  recent night (weight 1);
* MA  -- the raw window, one weight per night.

Parameters are fitted by ordinary least squares with an intercept column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DlmoError

KINDS = ("SMA", "EMA", "MA")


class LengthMismatch(DlmoError, ValueError):
    pass


class InsufficientData(DlmoError, ValueError):
    pass


@dataclass(frozen=True)
class MAConfig:
    kind: str = "EMA"
    n: int = 7
    alpha: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.upper())
        if self.kind not in KINDS:
            raise ValueError(f"unknown moving-average kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")

    @property
    def n_features(self) -> int:
        return self.n if self.kind == "MA" else 1

    @property
    def n_params(self) -> int:
        return self.n_features + 1

    def weights(self) -> np.ndarray:
        """Per-night weights applied to the raw window, oldest first."""
        if self.kind == "SMA":
            return np.ones(self.n)
        if self.kind == "EMA":
            return self.alpha ** np.arange(self.n - 1, -1, -1, dtype=float)
        return np.eye(self.n)


@dataclass(frozen=True)
class MAParams:
    weights: np.ndarray  # one coefficient per feature (a for SMA/EMA, w for MA)
    intercept: float

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float).ravel())
        object.__setattr__(self, "intercept", float(self.intercept))


def _as_matrix(windows) -> np.ndarray:
    if hasattr(windows, "midpoints"):
        windows = windows.midpoints
    if isinstance(windows, (list, tuple)) and windows and hasattr(windows[0], "midpoints"):
        windows = [w.midpoints for w in windows]
    return np.atleast_2d(np.asarray(windows, dtype=float))


def feature_matrix(windows, cfg: MAConfig) -> np.ndarray:
    """Features for a batch of windows, shape (N, n_features)."""
    T = _as_matrix(windows)
    if T.shape[1] != cfg.n:
        raise LengthMismatch(f"window length {T.shape[1]} != n={cfg.n}")
    if cfg.kind == "MA":
        return T.copy()
    return (T @ cfg.weights())[:, None]


def feature_vector(win, cfg: MAConfig) -> np.ndarray:
    return feature_matrix(win, cfg)[0]


def predict(params: MAParams, windows, cfg: MAConfig):
    """Phase summary psi for one window (float) or a batch (array)."""
    single = np.ndim(getattr(windows, "midpoints", windows)) == 1
    F = feature_matrix(windows, cfg)
    if params.weights.size != F.shape[1]:
        raise LengthMismatch("parameter count does not match the model kind")
    psi = F @ params.weights + params.intercept
    return float(psi[0]) if single else psi


def fit_least_squares(windows, labels, cfg: MAConfig) -> MAParams:
    """Minimum-norm least-squares fit of labels on features plus intercept."""
    F = feature_matrix(windows, cfg)
    y = np.asarray([getattr(v, "phi", v) for v in np.ravel(labels)], dtype=float)
    if y.size != F.shape[0]:
        raise LengthMismatch(f"{F.shape[0]} windows but {y.size} labels")
    if y.size < cfg.n_params:
        raise InsufficientData(f"{y.size} samples for {cfg.n_params} parameters")
    A = np.column_stack([F, np.ones(y.size)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return MAParams(coef[:-1], coef[-1])


def residual_sum_of_squares(params: MAParams, windows, labels, cfg: MAConfig) -> float:
    r = np.asarray(labels, dtype=float) - predict(params, _as_matrix(windows), cfg)
    return float(r @ r)


def to_dict(cfg: MAConfig, params: MAParams) -> dict:
    return {"kind": cfg.kind, "n": cfg.n, "alpha": cfg.alpha,
            "params": params.weights.tolist() + [params.intercept]}


def from_dict(d: dict):
    cfg = MAConfig(d["kind"], int(d["n"]), float(d["alpha"]))
    p = [float(x) for x in d["params"]]
    if len(p) != cfg.n_params:
        raise ValueError(f"{cfg.kind} model with n={cfg.n} needs {cfg.n_params} params")
    return cfg, MAParams(p[:-1], p[-1])
