# %% [markdown]
# # Summarising a week of sleep midpoints
#
# Three linear models map the last n sleep midpoints to a phase estimate:
# a simple average (one slope), an exponentially weighted average with decay
# 0.9 (one slope) and a free weight per night (n slopes).  All are fitted by
# least squares with an intercept.

# %%
from dlmo import synth
from dlmo.evaluation import make_folds, r_squared, variance_ratio_check, window_size_sweep
from dlmo.mavg import MAConfig, fit_least_squares, predict
from dlmo.preprocess import build_samples

ds, truth = synth.generate_cohort(synth.CohortSpec(n_participants=120, seed=1))
samples = build_samples(ds, n=7)
print(len(samples), "labels usable;", samples.excluded)

for kind in ("SMA", "EMA", "MA"):
    cfg = MAConfig(kind, 7, 0.9)
    params = fit_least_squares(samples.midpoints, samples.y, cfg)
    fit = predict(params, samples.midpoints, cfg)
    print(f"{kind:>3}: weights {params.weights.round(3)}  intercept {params.intercept:.2f}"
          f"  in-sample r2 {r_squared(samples.y, fit):.3f}")

# %% [markdown]
# Weighting recent nights more heavily buys responsiveness at the price of
# noise: the variance factor of the exponential average always exceeds 1/n.

# %%
for alpha in (0.5, 0.9, 1.0):
    sma, ema = variance_ratio_check(7, alpha)
    print(f"alpha={alpha}: SMA {sma:.4f}  EMA {ema:.4f}")

# %% [markdown]
# Cross-validated error as the history length changes (leave one
# participant out).

# %%
for rep in window_size_sweep(ds, range(3, 9), cv="lopo"):
    print(f"n={rep.window} {rep.model:>3} RMSE_val {rep.rmse_val:.3f} h  AIC {rep.aic:.1f}")
