"""Angular-delay CSI datasets: generation, train/val/test split, persistence."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import (
    Normalization,
    generate_channel,
    kept_energy_ratio,
    normalize_dataset,
    random_spec,
    to_angular_delay,
    truncate_and_split,
)
from .fileio import MalformedHeaderError, read_container, write_container

__all__ = ["CSIDataset", "split_sizes", "generate_dataset", "write_dataset", "read_dataset"]

DATASET_FORMAT = "clnet-dataset"
SPLIT_RATIO = (10, 3, 2)


def split_sizes(n: int) -> tuple[int, int, int]:
    """Train/val/test counts in a 10:3:2 ratio, each at least one sample."""
    total = sum(SPLIT_RATIO)
    n_train = (n * SPLIT_RATIO[0] * 2 + total) // (2 * total)
    n_val = (n * SPLIT_RATIO[1] * 2 + total) // (2 * total)
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"{n} samples cannot fill three non-empty splits")
    return n_train, n_val, n_test


@dataclass
class CSIDataset:
    """Normalized samples ``N x 2 x Na x Na`` (float32) plus provenance.

    Samples ``[0, boundaries[0])`` are training, ``[boundaries[0],
    boundaries[1])`` validation, the rest test.
    """

    samples: np.ndarray
    boundaries: tuple[int, int]
    norm: Normalization
    n_subcarriers: int
    n_antennas: int
    generator: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def n_kept(self) -> int:
        return self.samples.shape[-1]

    def __len__(self):
        return len(self.samples)

    def split_indices(self, split: str) -> np.ndarray:
        a, b = self.boundaries
        ranges = {"train": (0, a), "val": (a, b), "test": (b, len(self))}
        try:
            lo, hi = ranges[split]
        except KeyError:
            raise ValueError(f"unknown split {split!r}") from None
        return np.arange(lo, hi)

    def split(self, split: str) -> np.ndarray:
        return self.samples[self.split_indices(split)]

    def physical(self, x: np.ndarray) -> np.ndarray:
        """Undo the dataset normalization."""
        return self.norm.invert(np.asarray(x, dtype=np.float64))


def generate_dataset(
    n_samples: int,
    preset: str = "indoor",
    seed: int = 1,
    *,
    n_subcarriers: int = 256,
    n_antennas: int = 32,
    subpaths: int = 10,
) -> tuple[CSIDataset, np.ndarray]:
    """Draw ``n_samples`` independent channels; returns the dataset and the
    per-sample fraction of energy kept by truncation."""
    sizes = split_sizes(n_samples)
    na = n_antennas
    planes = np.empty((n_samples, 2, na, na))
    kept = np.empty(n_samples)
    for i in range(n_samples):
        rng = np.random.default_rng([seed, i])
        spec = random_spec(
            rng, preset, n_subcarriers=n_subcarriers, n_antennas=n_antennas, n_kept=na, subpaths=subpaths
        )
        h = generate_channel(spec)
        h *= np.sqrt(h.size) / np.linalg.norm(h)
        hp = to_angular_delay(h)
        kept[i] = kept_energy_ratio(hp, na)
        planes[i] = truncate_and_split(hp, na).planes
    normed, norm = normalize_dataset(planes)
    ds = CSIDataset(
        samples=normed.astype(np.float32),
        boundaries=(sizes[0], sizes[0] + sizes[1]),
        norm=norm,
        n_subcarriers=n_subcarriers,
        n_antennas=n_antennas,
        generator={"preset": preset, "subpaths": subpaths},
        seed=seed,
    )
    return ds, kept


def _payload_size(h: dict) -> int:
    return int(h["count"]) * 2 * int(h["na"]) ** 2 * 4


def write_dataset(path, ds: CSIDataset) -> None:
    header = {
        "format": DATASET_FORMAT,
        "version": 1,
        "nc": ds.n_subcarriers,
        "nt": ds.n_antennas,
        "na": ds.n_kept,
        "count": len(ds),
        "split": list(ds.boundaries),
        "offset": ds.norm.offset,
        "scale": ds.norm.scale,
        "generator": ds.generator,
        "seed": ds.seed,
    }
    payload = np.ascontiguousarray(ds.samples, dtype="<f4").tobytes()
    write_container(path, header, payload)


def read_dataset(path) -> CSIDataset:
    h, payload = read_container(path, DATASET_FORMAT, _payload_size)
    na, count = int(h["na"]), int(h["count"])
    a, b = h["split"]
    if not 0 < a < b < count:
        raise MalformedHeaderError(f"{path}: split boundaries {h['split']} invalid for {count} samples")
    samples = np.frombuffer(payload, dtype="<f4").reshape(count, 2, na, na).astype(np.float32)
    return CSIDataset(
        samples=samples,
        boundaries=(int(a), int(b)),
        norm=Normalization(float(h["offset"]), float(h["scale"])),
        n_subcarriers=int(h["nc"]),
        n_antennas=int(h["nt"]),
        generator=h["generator"],
        seed=int(h["seed"]),
    )
