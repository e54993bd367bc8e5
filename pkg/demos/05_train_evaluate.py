# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Learning the distance
#
# A miniature version of the full pipeline: simulate a dataset, train a
# reduced TViT with the log-cosh loss, then measure the error distribution,
# occlusion robustness and latency.  It runs in well under a minute on one core;
# larger epochs and more ROIs improve the numbers.

# %%
import tempfile
from pathlib import Path

import numpy as np

from holofocus import OpticalConfig, generate_dataset
from holofocus.evaluation import bench_inference, evaluate, occlusion_sweep
from holofocus.models import ModelSpec, ViTConfig
from holofocus.training import TrainConfig, train

work = Path(tempfile.mkdtemp())
data = generate_dataset("pseudo_periodic", "phase", 0, 30, 1, 6, OpticalConfig(grid=(256, 256)), 0,
                        work / "data")
print(len(data), "holograms")

# %% [markdown]
# ## Training
#
# Each epoch draws fresh random ROIs from every training hologram.  The model
# with the lowest validation loss is kept.

# %%
spec = ModelSpec("tvit", ViTConfig(depth=2, heads=4, hidden=64, mlp_dim=128))
cfg = TrainConfig(lr=3e-4, epochs=6, rois_per_hologram=8, batch_size=32, loss="logcosh")
result = train(spec, data, cfg, work / "run",
               log=lambda r: print(f"epoch {r.epoch}  train {r.train_loss:.3f}  val {r.val_loss:.3f}"))

# %% [markdown]
# ## Error distribution on the held-out holograms

# %%
report = evaluate(result.model, result.splits[2], rois_per_hologram=16)
print(f"mean {report.mu:+.2f} um, sigma {report.sigma:.2f} um, FWHM {report.fwhm_um:.2f} um")
for z, m, s, n in report.per_z():
    print(f"  z {z:4.0f}  mean eps {m:+6.2f}  std {s:5.2f}  n {n}")

# %% [markdown]
# ## Occlusion
#
# A black square covering 5 % or 10 % of each ROI.

# %%
sweep = occlusion_sweep(result.model, result.splits[2], [0.0, 0.05, 0.10], seed=0, rois_per_hologram=8)
for row in sweep.summary_rows():
    print(f"fraction {row['fraction']:.2f}  |mean eps| {row['mean_abs_eps_um']:.2f}  FWHM {row['fwhm_um']:.2f}")

# %% [markdown]
# ## Latency of one ROI

# %%
bench = bench_inference(result.model, n=50, threads=1)
print(f"median {bench.median_ms:.1f} ms (20 Hz budget {bench.realtime_limit_ms:.0f} ms)")
