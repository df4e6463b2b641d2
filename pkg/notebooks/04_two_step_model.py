# %% [markdown]
# # Adding a day of wearable data to the sleep summary
#
# The two-step model feeds 24 wake-relative hours of light, skin temperature
# and activity through a GRU, together with the moving-average phase
# summary psi.  The readout adds a learned correction to psi.  Training runs
# least squares for psi first, then the GRU alone, then fine-tunes
# everything, keeping the checkpoint with the best held-out RMSE.

# %%
import numpy as np

from dlmo import gru, synth
from dlmo.evaluation import ModelSpec, make_folds, run_model_comparison
from dlmo.gru import GruConfig
from dlmo.preprocess import build_samples

ds, _ = synth.generate_cohort(synth.CohortSpec(n_participants=100, seed=3))
samples = build_samples(ds)
print(samples.days.shape, samples.midpoints.shape)

# %% [markdown]
# One fit on everything, to look at the training history.

# %%
cfg = GruConfig()  # 32 hidden units, up to 300 + 100 epochs with early stopping
model, history = gru.train_three_stage(samples, cfg)
print("best checkpoint: stage", history.best_stage, "epoch", history.best_epoch,
      f"val RMSE {history.best_val_rmse:.3f} h")
print("trainable parameters:", model.n_trainable())

# %% [markdown]
# Grouped 5-fold comparison against the sleep-only and sensor-only models.

# %%
plan = make_folds(samples, "kfold", seed=0, k=5)
specs = [ModelSpec("ema"), ModelSpec("rnn-ema", gru=cfg), ModelSpec("rnn-24h", gru=cfg)]
for rep in run_model_comparison(samples, specs, plan):
    print(f"{rep.model:<12} RMSE_val {rep.rmse_val:.3f} h   <1h {rep.lt1h_fraction:.2f}")

# %% [markdown]
# Models are saved as JSON and reload bit-for-bit.

# %%
import tempfile
from pathlib import Path

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "model.json"
    gru.save_model(model, path)
    again = gru.load_model(path)
    same = np.array_equal(gru.predict_batch(model, samples.days, samples.midpoints),
                          gru.predict_batch(again, samples.days, samples.midpoints))
    print("reloaded predictions identical:", same)
