"""Synthetic clustered-multipath CSI and the angular-delay transform.

A channel is a sum of plane-wave paths across a half-wavelength uniform
linear array. Each path contributes an outer product between a subcarrier
phase ramp (its delay) and an array steering vector (its angle of arrival).
Paths are grouped into clusters, so after the 2-D DFT the energy gathers in a
few compact blobs of the delay x angle grid.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

__all__ = [
    "Cluster",
    "MultipathSpec",
    "AngularDelayCSI",
    "Normalization",
    "PRESETS",
    "steering_vector",
    "generate_channel",
    "random_spec",
    "default_spec",
    "dft_matrix",
    "to_angular_delay",
    "from_angular_delay",
    "truncate_and_split",
    "merge_planes",
    "kept_energy_ratio",
    "normalize_dataset",
    "denormalize",
]


@dataclass(frozen=True)
class Cluster:
    aoa: float  # radians, broadside = 0
    angle_spread: float  # radians, std of sub-path angles
    delay: float  # in delay taps (1 tap = 1 / bandwidth)
    delay_spread: float  # taps
    gain: float = 1.0  # amplitude scale of the cluster


@dataclass(frozen=True)
class MultipathSpec:
    clusters: tuple[Cluster, ...]
    n_subcarriers: int = 256
    n_antennas: int = 32
    n_kept: int = 32
    subpaths: int = 10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))
        self.validate()

    def validate(self):
        if len(self.clusters) < 1:
            raise ValueError("MultipathSpec needs at least one cluster")
        if min(self.n_subcarriers, self.n_antennas, self.n_kept, self.subpaths) < 1:
            raise ValueError("grid sizes and sub-path count must be positive")
        if self.n_kept > self.n_subcarriers:
            raise ValueError(f"n_kept={self.n_kept} exceeds n_subcarriers={self.n_subcarriers}")
        for i, c in enumerate(self.clusters):
            if c.angle_spread < 0 or c.delay_spread < 0:
                raise ValueError(f"cluster {i}: spreads must be non-negative")
            if c.delay < 0:
                raise ValueError(f"cluster {i}: delay must be non-negative")
            if c.delay + 3 * c.delay_spread >= self.n_kept:
                raise ValueError(
                    f"cluster {i}: delay + 3*spread = {c.delay + 3 * c.delay_spread:.2f} "
                    f"must stay below n_kept={self.n_kept}"
                )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["clusters"] = [asdict(c) for c in self.clusters]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MultipathSpec":
        d = dict(d)
        d["clusters"] = tuple(Cluster(**c) for c in d["clusters"])
        return cls(**d)


@dataclass(frozen=True)
class _Preset:
    n_clusters: tuple[int, int]  # inclusive range
    delay: tuple[float, float]
    delay_spread: tuple[float, float]
    angle_spread: tuple[float, float]
    decay_taps: float  # cluster power ~ exp(-delay / decay_taps)


# Indoor: few clusters, short delays. Outdoor: more clusters, longer delays.
PRESETS = {
    "indoor": _Preset((3, 3), (3.0, 14.0), (0.2, 1.0), (0.01, 0.05), 8.0),
    "outdoor": _Preset((4, 6), (3.0, 24.0), (0.3, 1.5), (0.005, 0.03), 14.0),
}


def random_spec(
    rng: np.random.Generator,
    preset: str = "indoor",
    *,
    n_subcarriers: int = 256,
    n_antennas: int = 32,
    n_kept: int = 32,
    subpaths: int = 10,
) -> MultipathSpec:
    """Draw cluster geometry for one sample from a named preset."""
    try:
        p = PRESETS[preset]
    except KeyError:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}") from None
    k = int(rng.integers(p.n_clusters[0], p.n_clusters[1] + 1))
    clusters = []
    for _ in range(k):
        spread = rng.uniform(*p.delay_spread)
        hi = min(p.delay[1], n_kept - 1 - 3 * spread)
        delay = rng.uniform(p.delay[0], hi)
        clusters.append(
            Cluster(
                aoa=float(rng.uniform(-np.pi / 3, np.pi / 3)),
                angle_spread=float(rng.uniform(*p.angle_spread)),
                delay=float(delay),
                delay_spread=float(spread),
                gain=float(np.exp(-delay / (2 * p.decay_taps)) * rng.lognormal(0.0, 0.5)),
            )
        )
    return MultipathSpec(
        clusters=tuple(clusters),
        n_subcarriers=n_subcarriers,
        n_antennas=n_antennas,
        n_kept=n_kept,
        subpaths=subpaths,
        seed=int(rng.integers(2**31)),
    )


def default_spec(seed: int = 0, **grid) -> MultipathSpec:
    """The three-cluster indoor spec drawn deterministically from ``seed``."""
    return random_spec(np.random.default_rng(seed), "indoor", **grid)


def steering_vector(n_antennas: int, aoa: float) -> np.ndarray:
    n = np.arange(n_antennas)
    return np.exp(-1j * np.pi * n * np.sin(aoa))


def generate_channel(spec: MultipathSpec) -> np.ndarray:
    """Spatial-frequency channel ``H`` of shape ``n_subcarriers x n_antennas``.

    Sub-path angles and delays scatter (Gaussian) around their cluster mean;
    sub-path gains are circular complex Gaussian. The phase ramp
    ``exp(+j 2 pi k tau / Nc)`` places delay ``tau`` at row ``tau`` after
    :func:`to_angular_delay`. Pure function of ``spec``.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    nc, nt = spec.n_subcarriers, spec.n_antennas
    k = np.arange(nc)[:, None]
    n = np.arange(nt)[None, :]
    h = np.zeros((nc, nt), dtype=np.complex128)
    for c in spec.clusters:
        aoas = c.aoa + c.angle_spread * rng.standard_normal(spec.subpaths)
        delays = np.clip(c.delay + c.delay_spread * rng.standard_normal(spec.subpaths), 0.0, spec.n_kept - 1)
        gains = (rng.standard_normal(spec.subpaths) + 1j * rng.standard_normal(spec.subpaths)) / np.sqrt(
            2 * spec.subpaths
        )
        gains *= c.gain
        # sum_p g_p * exp(j2pi k tau_p / Nc) * exp(-j pi n sin(theta_p))
        freq = np.exp(2j * np.pi * k * delays[None, :] / nc)  # nc x P
        space = np.exp(-1j * np.pi * np.sin(aoas)[:, None] * n)  # P x nt
        h += (freq * gains[None, :]) @ space
    if not np.any(h):
        raise ValueError("generated channel is identically zero")
    return h


def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT matrix, ``F[a, b] = exp(-j 2 pi a b / n) / sqrt(n)``."""
    idx = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / n) / np.sqrt(n)


def to_angular_delay(h: np.ndarray) -> np.ndarray:
    """``Fc @ H @ Ft^H`` with unitary DFT matrices (computed by FFT)."""
    return np.fft.ifft(np.fft.fft(h, axis=0, norm="ortho"), axis=1, norm="ortho")


def from_angular_delay(hp: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_angular_delay`: ``Fc^H @ H' @ Ft``."""
    return np.fft.fft(np.fft.ifft(hp, axis=0, norm="ortho"), axis=1, norm="ortho")


@dataclass
class AngularDelayCSI:
    """Truncated angular-delay channel as ``2 x Na x Na`` real planes."""

    planes: np.ndarray  # [real, imag]
    offset: float | None = None
    scale: float | None = None

    @property
    def n_kept(self) -> int:
        return self.planes.shape[1]

    def to_complex(self) -> np.ndarray:
        return merge_planes(self.planes)


def truncate_and_split(hp: np.ndarray, n_kept: int) -> AngularDelayCSI:
    """Keep the first ``n_kept`` delay rows and stack real/imag into planes."""
    if n_kept > hp.shape[0]:
        raise ValueError(f"n_kept={n_kept} exceeds {hp.shape[0]} delay rows")
    kept = hp[:n_kept]
    return AngularDelayCSI(np.stack([kept.real, kept.imag]))


def merge_planes(planes: np.ndarray) -> np.ndarray:
    return planes[0] + 1j * planes[1]


def kept_energy_ratio(hp: np.ndarray, n_kept: int) -> float:
    total = np.sum(np.abs(hp) ** 2)
    return float(np.sum(np.abs(hp[:n_kept]) ** 2) / total)


@dataclass(frozen=True)
class Normalization:
    """Affine map ``x -> (x - offset) / scale`` shared by a whole dataset."""

    offset: float
    scale: float

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.offset) / self.scale

    def invert(self, y: np.ndarray) -> np.ndarray:
        return y * self.scale + self.offset


def normalize_dataset(samples) -> tuple[np.ndarray, Normalization]:
    """Min-max scale a stack of samples into ``[0, 1]``.

    ``samples`` is an array ``N x 2 x Na x Na`` or a list of
    :class:`AngularDelayCSI`.
    """
    if isinstance(samples, (list, tuple)):
        if not samples:
            raise ValueError("cannot normalize an empty dataset")
        arr = np.stack([s.planes if isinstance(s, AngularDelayCSI) else s for s in samples])
    else:
        arr = np.asarray(samples)
        if arr.size == 0:
            raise ValueError("cannot normalize an empty dataset")
    lo, hi = float(arr.min()), float(arr.max())
    if hi == lo:
        raise ValueError("degenerate dataset: max == min, cannot normalize")
    norm = Normalization(offset=lo, scale=hi - lo)
    out = np.clip(norm.apply(arr), 0.0, 1.0)
    return out, norm


def denormalize(x: np.ndarray, norm: Normalization) -> np.ndarray:
    return norm.invert(x)
