"""Mini-batch training of the reconstruction objective.

Runs are a pure function of ``(TrainConfig, dataset)``: parameter init is
seeded by ``config.seed`` and epoch ``e`` shuffles with
``default_rng([seed, e])``, so a run resumed from a checkpoint replays the
exact same batches.
"""

from __future__ import annotations

import csv
import io
import math
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .datasets import CSIDataset, read_dataset
from .models import Autoencoder, build_model, format_eta, load_checkpoint, parse_eta, save_checkpoint
from .pipeline import evaluate

__all__ = [
    "TrainConfig",
    "EpochRecord",
    "TrainLog",
    "TrainingDivergedError",
    "Adam",
    "mse_loss",
    "lr_schedule",
    "train_step",
    "train",
]


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    peak_lr: float = 2e-3
    warmup_frac: float = 0.05
    final_lr_frac: float = 0.01
    seed: int = 1
    eta: str = "1/4"
    arch: str = "clnet"
    dataset_path: str | None = None
    checkpoint_every: int = 0
    checkpoint_path: str | None = None

    def validate(self, n_train: int | None = None):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if n_train is not None and self.batch_size > n_train:
            raise ValueError(f"batch size {self.batch_size} exceeds training set of {n_train}")
        if self.checkpoint_every and not self.checkpoint_path:
            raise ValueError("checkpoint_every needs checkpoint_path")
        parse_eta(self.eta)


def mse_loss(batch_true, batch_pred):
    """Mean squared error over batch and elements.

    Tensors go through the autodiff op (so the result is differentiable);
    plain arrays return a float.
    """
    if isinstance(batch_true, Tensor) or isinstance(batch_pred, Tensor):
        t = batch_true if isinstance(batch_true, Tensor) else Tensor(batch_true)
        p = batch_pred if isinstance(batch_pred, Tensor) else Tensor(batch_pred)
        return ad.mean_squared_error(p, t)
    t, p = np.asarray(batch_true), np.asarray(batch_pred)
    if t.shape != p.shape:
        raise ad.ShapeError(f"mse_loss: shapes {t.shape} and {p.shape} differ")
    return float(np.mean((p - t) ** 2))


def _warmup_epochs(config: TrainConfig) -> int:
    return max(1, math.ceil(config.warmup_frac * config.epochs))


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Learning rate for 0-based ``epoch``.

    Linear warmup reaching ``peak_lr`` at the last warmup epoch, then cosine
    decay to ``final_lr_frac * peak_lr`` at the final epoch.
    """
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    peak = config.peak_lr
    if config.epochs == 1:
        return peak
    warm = min(_warmup_epochs(config), config.epochs - 1)
    if epoch < warm:
        return peak * (epoch + 1) / warm
    span = config.epochs - warm
    progress = (epoch - (warm - 1)) / span
    floor = config.final_lr_frac * peak
    return floor + (peak - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = OrderedDict((k, np.zeros_like(t.data)) for k, t in params.items())
        self.v = OrderedDict((k, np.zeros_like(t.data)) for k, t in params.items())

    def step(self, params, grads, lr: float):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for (name, t), g in zip(params.items(), grads):
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            update = (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            t.data = (t.data - update).astype(t.dtype)

    def state_arrays(self) -> OrderedDict:
        out = OrderedDict()
        for k in self.m:
            out[f"adam.m/{k}"] = self.m[k]
        for k in self.v:
            out[f"adam.v/{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays, step_count: int):
        for k in self.m:
            self.m[k] = np.array(arrays[f"adam.m/{k}"], dtype=self.m[k].dtype)
            self.v[k] = np.array(arrays[f"adam.v/{k}"], dtype=self.v[k].dtype)
        self.step_count = step_count


def train_step(model: Autoencoder, optimizer: Adam, batch: np.ndarray, lr: float) -> float:
    """One gradient step on ``batch``; returns the pre-update loss."""
    x = Tensor(batch, dtype=model.params.dtype)
    params = model.params
    with Tape() as tape:
        loss = mse_loss(x, model(x))
    grads = tape.backward(loss, params.tensors())
    value = loss.item()
    if math.isfinite(value):
        optimizer.step(params, grads, lr)
    return value


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_nmse_db: float
    lr: float
    seconds: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    seed: int = 0
    config: dict = field(default_factory=dict)

    def append(self, rec: EpochRecord):
        if self.records and rec.epoch != self.records[-1].epoch + 1:
            raise ValueError("epoch records must be consecutive")
        self.records.append(rec)

    @property
    def train_loss(self) -> list[float]:
        return [r.train_loss for r in self.records]

    @property
    def val_nmse_db(self) -> list[float]:
        return [r.val_nmse_db for r in self.records]

    def to_csv(self, timing: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_nmse_db", "lr", "seconds"][: 5 if timing else 4])
        for r in self.records:
            row = [r.epoch, repr(r.train_loss), repr(r.val_nmse_db), repr(r.lr)]
            if timing:
                row.append(f"{r.seconds:.3f}")
            w.writerow(row)
        return buf.getvalue()


def _save(path, model, optimizer, log, epoch):
    state = {
        "epoch": epoch,
        "step": optimizer.step_count,
        # wall time is left out so identical runs write identical files
        "log": [[r.epoch, r.train_loss, r.val_nmse_db, r.lr] for r in log.records],
    }
    save_checkpoint(path, model, extra_arrays=optimizer.state_arrays(), state=state)


def train(
    config: TrainConfig,
    model: Autoencoder | None = None,
    dataset: CSIDataset | None = None,
    *,
    resume_from=None,
    clock=time.perf_counter,
    on_epoch=None,
) -> tuple[Autoencoder, TrainLog]:
    """Minimise reconstruction MSE with Adam over shuffled mini-batches.

    ``dataset`` defaults to ``config.dataset_path``; ``model`` defaults to a
    fresh ``config.arch`` seeded with ``config.seed``. ``resume_from`` names a
    checkpoint written by an earlier call with the same config.
    """
    if dataset is None:
        if not config.dataset_path:
            raise ValueError("no dataset given and config.dataset_path is unset")
        dataset = read_dataset(config.dataset_path)
    train_x = dataset.split("train")
    config.validate(len(train_x))
    eta = parse_eta(config.eta)

    start = 0
    log = TrainLog(seed=config.seed, config=asdict(config))
    if resume_from is not None:
        model, extra, state = load_checkpoint(resume_from, with_state=True)
        optimizer = Adam(model.params)
        optimizer.load_state_arrays(extra, int(state["step"]))
        start = int(state["epoch"])
        for row in state.get("log", []):
            log.append(EpochRecord(int(row[0]), *map(float, row[1:4]), seconds=0.0))
    else:
        if model is None:
            model = build_model(config.arch, eta, dataset.n_kept, seed=config.seed)
        optimizer = Adam(model.params)
    if model.eta != eta:
        raise ValueError(f"model bottleneck eta={format_eta(model.eta)} does not match config eta={config.eta}")
    if model.na != dataset.n_kept:
        raise ValueError(f"model Na={model.na} does not match dataset Na={dataset.n_kept}")

    n = len(train_x)
    for epoch in range(start, config.epochs):
        t0 = clock()
        lr = lr_schedule(epoch, config)
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        total = 0.0
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo : lo + config.batch_size]
            loss = train_step(model, optimizer, train_x[idx], lr)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch + 1}, batch {b}")
            total += loss * len(idx)
        val = evaluate(model, dataset, "val").nmse_db
        rec = EpochRecord(epoch + 1, total / n, val, lr, clock() - t0)
        log.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        done = epoch + 1
        if config.checkpoint_every and (done % config.checkpoint_every == 0 or done == config.epochs):
            _save(config.checkpoint_path, model, optimizer, log, done)
    return model, log
