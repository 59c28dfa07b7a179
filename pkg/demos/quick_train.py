"""A few epochs on a small synthetic set, compared with trivial predictors.

    python demos/quick_train.py [epochs]

Takes roughly a minute on one CPU core with the defaults.
"""

import sys

import numpy as np

from clnet.datasets import generate_dataset
from clnet.pipeline import evaluate, nmse
from clnet.training import TrainConfig, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 12
ds, kept = generate_dataset(1500, "indoor", seed=7)
print(f"{len(ds)} samples, mean kept energy {kept.mean():.4f}")

val = ds.split("val")
truth = ds.physical(val)
print(f"zero predictor:  {nmse(truth, np.zeros_like(truth))[2]:7.3f} dB")
mean_pred = np.broadcast_to(ds.split("train").mean(axis=0), val.shape)
print(f"mean predictor:  {nmse(truth, ds.physical(mean_pred))[2]:7.3f} dB")

cfg = TrainConfig(epochs=epochs, batch_size=32, seed=1, eta="1/4")
model, log = train(cfg, dataset=ds, on_epoch=lambda r: print(f"epoch {r.epoch:3d}  loss {r.train_loss:.3e}  val {r.val_nmse_db:7.3f} dB"))
print(f"clnet test NMSE: {evaluate(model, ds, 'test').nmse_db:7.3f} dB")
