"""Encode -> feed back -> decode, plus NMSE evaluation and codeword files."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .autodiff import Tensor
from .datasets import CSIDataset
from .fileio import MalformedHeaderError, read_container, write_container
from .models import Autoencoder, codeword_length, format_eta, parse_eta

__all__ = [
    "Codeword",
    "EvalReport",
    "NMSE_DB_FLOOR",
    "encode",
    "decode",
    "reconstruct",
    "nmse",
    "to_db",
    "evaluate",
    "write_codewords",
    "read_codewords",
]

NMSE_DB_FLOOR = -120.0
CODEWORD_FORMAT = "clnet-codewords"


@dataclass
class Codeword:
    """Feedback payload: shape ``(M,)`` for one sample or ``(count, M)``."""

    values: np.ndarray
    model_id: str
    eta: Fraction
    na: int

    def __len__(self):
        return self.values.shape[-1]

    @property
    def count(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[0]


def _forward_batches(fn, x: np.ndarray, batch_size: int) -> np.ndarray:
    if x.ndim in (1, 3):
        return fn(Tensor(x)).data
    outs = [fn(Tensor(x[i : i + batch_size])).data for i in range(0, len(x), batch_size)]
    return np.concatenate(outs)


def encode(model: Autoencoder, ha, batch_size: int = 256) -> Codeword:
    """Normalized ``2 x Na x Na`` sample(s) -> codeword(s)."""
    x = np.asarray(ha, dtype=model.params.dtype)
    v = _forward_batches(model.encode, x, batch_size)
    return Codeword(v, model.model_id, model.eta, model.na)


def decode(model: Autoencoder, codeword, batch_size: int = 256) -> np.ndarray:
    """Codeword(s) -> reconstructed normalized sample(s) in ``[0, 1]``."""
    v = codeword.values if isinstance(codeword, Codeword) else codeword
    v = np.asarray(v, dtype=model.params.dtype)
    if v.shape[-1] != model.codeword_length:
        raise ValueError(f"codeword length {v.shape[-1]} does not match decoder input {model.codeword_length}")
    return _forward_batches(model.decode, v, batch_size)


def reconstruct(model: Autoencoder, ha, batch_size: int = 256) -> np.ndarray:
    """The composite ``decode(encode(x))`` evaluated as a single graph."""
    x = np.asarray(ha, dtype=model.params.dtype)
    return _forward_batches(model, x, batch_size)


def to_db(linear: float) -> float:
    if linear <= 0:
        return NMSE_DB_FLOOR
    return max(10.0 * np.log10(linear), NMSE_DB_FLOOR)


def nmse(h_true, h_est) -> tuple[np.ndarray, float, float]:
    """Per-sample ``||H - H_hat||^2 / ||H||^2``, their mean, and the mean in dB.

    Inputs are physical-scale arrays, one sample (``2 x Na x Na``) or a
    batch with a leading axis.
    """
    t = np.asarray(h_true, dtype=np.float64)
    e = np.asarray(h_est, dtype=np.float64)
    if t.shape != e.shape:
        raise ValueError(f"shape mismatch: {t.shape} vs {e.shape}")
    if t.ndim == 3:
        t, e = t[None], e[None]
    axes = tuple(range(1, t.ndim))
    power = np.sum(t * t, axis=axes)
    if np.any(power == 0):
        raise ValueError("ground-truth sample with zero energy; NMSE undefined")
    per_sample = np.sum((t - e) ** 2, axis=axes) / power
    mean = float(per_sample.mean())
    return per_sample, mean, to_db(mean)


@dataclass
class EvalReport:
    per_sample: np.ndarray
    nmse_linear: float
    nmse_db: float
    eta: Fraction
    model_id: str = ""
    scenario: str = ""
    split: str = "test"
    extra: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.per_sample)

    def to_text(self) -> str:
        fields = {
            "model": self.model_id,
            "scenario": self.scenario,
            "split": self.split,
            "eta": format_eta(self.eta),
            "count": self.count,
            "nmse_linear": repr(self.nmse_linear),
            "nmse_db": f"{self.nmse_db:.6f}",
            **self.extra,
        }
        return "".join(f"{k}={v}\n" for k, v in fields.items())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_index", "nmse_linear", "nmse_db"])
        for i, v in enumerate(self.per_sample):
            w.writerow([i, repr(float(v)), f"{to_db(v):.6f}"])
        return buf.getvalue()


def evaluate(model: Autoencoder, dataset: CSIDataset, split: str = "test", batch_size: int = 256) -> EvalReport:
    """NMSE of the model's reconstructions on one split, on physical scale."""
    if dataset.n_kept != model.na:
        raise ValueError(f"dataset Na={dataset.n_kept} does not match model Na={model.na}")
    x = dataset.split(split)
    est = reconstruct(model, x, batch_size)
    per, mean, db = nmse(dataset.physical(x), dataset.physical(est))
    return EvalReport(
        per,
        mean,
        db,
        model.eta,
        model.model_id,
        scenario=str(dataset.generator.get("preset", "")),
        split=split,
    )


# --------------------------------------------------------------------------- codeword files


def write_codewords(path, cw: Codeword) -> None:
    values = np.atleast_2d(cw.values)
    header = {
        "format": CODEWORD_FORMAT,
        "version": 1,
        "model": cw.model_id,
        "eta": format_eta(cw.eta),
        "na": cw.na,
        "m": int(values.shape[1]),
        "count": int(values.shape[0]),
    }
    write_container(path, header, np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_codewords(path) -> Codeword:
    h, payload = read_container(path, CODEWORD_FORMAT, lambda h: int(h["count"]) * int(h["m"]) * 4)
    try:
        eta = parse_eta(h["eta"])
        m, count, na = int(h["m"]), int(h["count"]), int(h["na"])
        expected = codeword_length(na, eta)
    except (KeyError, ValueError) as err:
        raise MalformedHeaderError(f"{path}: bad codeword header ({err})") from None
    if m != expected:
        raise MalformedHeaderError(f"{path}: eta={format_eta(eta)} with Na={na} implies M={expected}, header says {m}")
    values = np.frombuffer(payload, dtype="<f4").reshape(count, m).astype(np.float32)
    return Codeword(values, str(h["model"]), eta, na)
