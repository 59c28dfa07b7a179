"""Assembled CSI-feedback autoencoders and their checkpoint format."""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from fractions import Fraction
from math import floor

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import (
    Conv,
    Dense,
    DualPathBlock,
    Flatten,
    ForgedComplexInput,
    ModelParams,
    Reshape,
    SEBlock,
    Sequential,
    Shift,
    SpatialAttention,
    crblock,
)
from .fileio import MalformedHeaderError, TruncatedPayloadError, read_container, write_container

__all__ = [
    "SUPPORTED_ETAS",
    "ARCHITECTURES",
    "parse_eta",
    "format_eta",
    "codeword_length",
    "Autoencoder",
    "assemble_clnet",
    "assemble_crnet_baseline",
    "build_model",
    "save_checkpoint",
    "load_checkpoint",
]

SUPPORTED_ETAS = tuple(Fraction(1, d) for d in (4, 8, 16, 32, 64))
ARCHITECTURES = ("clnet", "crnet-base", "clnet-noattn")
CHECKPOINT_FORMAT = "clnet-checkpoint"


def parse_eta(value) -> Fraction:
    """Parse a compression ratio given as ``"1/4"`` (or a Fraction)."""
    if isinstance(value, Fraction):
        eta = value
    elif isinstance(value, str):
        num, sep, den = value.strip().partition("/")
        if not sep or not num.strip().isdigit() or not den.strip().isdigit():
            raise ValueError(f"compression ratio must look like '1/4', got {value!r}")
        eta = Fraction(int(num), int(den))
    else:
        raise ValueError(f"compression ratio must be a fraction string, got {value!r}")
    if eta not in SUPPORTED_ETAS:
        raise ValueError(f"unsupported compression ratio {eta}; choose from {[str(e) for e in SUPPORTED_ETAS]}")
    return eta


def format_eta(eta: Fraction) -> str:
    return f"{eta.numerator}/{eta.denominator}"


def codeword_length(na: int, eta: Fraction) -> int:
    m = floor(2 * na * na * eta)
    if m < 1:
        raise ValueError(f"eta={eta} leaves an empty codeword for Na={na}")
    return m


@dataclass
class Autoencoder:
    """Encoder/decoder graphs over one parameter collection."""

    arch: str
    eta: Fraction
    na: int
    encoder: Sequential
    decoder: Sequential
    params: ModelParams
    config: dict = field(default_factory=dict)

    @property
    def codeword_length(self) -> int:
        return codeword_length(self.na, self.eta)

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (2, self.na, self.na)

    @property
    def model_id(self) -> str:
        return f"{self.arch}-eta{self.eta.numerator}_{self.eta.denominator}-na{self.na}"

    def encode(self, x: Tensor, params: ModelParams | None = None) -> Tensor:
        if tuple(x.shape[-3:]) != self.input_shape:
            raise ad.ShapeError(f"{self.model_id}: input must be {self.input_shape}, got {x.shape}")
        return self.encoder.forward(self.params if params is None else params, x)

    def decode(self, v: Tensor, params: ModelParams | None = None) -> Tensor:
        if v.shape[-1] != self.codeword_length:
            raise ad.ShapeError(f"{self.model_id}: codeword length {v.shape[-1]} != {self.codeword_length}")
        return self.decoder.forward(self.params if params is None else params, v)

    def __call__(self, x: Tensor, params: ModelParams | None = None) -> Tensor:
        p = self.params if params is None else params
        return self.decode(self.encode(x, p), p)

    def with_params(self, params: ModelParams) -> "Autoencoder":
        return Autoencoder(self.arch, self.eta, self.na, self.encoder, self.decoder, params, dict(self.config))


def _decoder(na: int, m: int, c_dec: int, side: int, output: str) -> Sequential:
    return Sequential(
        "decoder",
        [
            Dense("decoder.fc", m, 2 * na * na),
            Reshape((2, na, na)),
            Conv("decoder.head", 2, c_dec, (5, 5), act="relu"),
            crblock("decoder.refine1", c_dec, side),
            crblock("decoder.refine2", c_dec, side),
            Conv("decoder.out", c_dec, 2, (1, 1), act=output),
        ],
    )


def _finish(arch, eta, na, encoder, decoder, seed, dtype, config) -> Autoencoder:
    rng = np.random.default_rng(seed)
    params = ModelParams.initialize(encoder.param_specs() + decoder.param_specs(), rng, dtype)
    config = {"arch": arch, "eta": format_eta(eta), "na": na, "seed": seed, **config}
    return Autoencoder(arch, eta, na, encoder, decoder, params, config)


def assemble_clnet(
    eta,
    na: int = 32,
    c: int = 32,
    *,
    c_dec: int = 8,
    seed: int = 0,
    gate: str = "hard_sigmoid",
    output: str = "sigmoid",
    attention: bool = True,
    forged_input: bool = True,
    sa_kernel: int = 7,
    dtype=np.float32,
) -> Autoencoder:
    """Build the CLNet autoencoder.

    Encoder: centering (x - 0.5) -> forged complex input (1x1, 2->C) -> SE channel attention ->
    spatial attention -> 1x1 projection C->2 -> flatten -> dense to the
    codeword. Decoder: dense -> reshape -> 5x5 head -> two light refine
    blocks (1x3/3x1) -> 1x1 conv to 2 planes -> output activation.

    ``attention=False, forged_input=False`` gives the ablation with a plain
    3x3 input conv and no attention.
    """
    eta = parse_eta(eta)
    m = codeword_length(na, eta)
    if forged_input:
        first = ForgedComplexInput("encoder.forged_input", c)
    else:
        first = Conv("encoder.input3x3", 2, c, (3, 3))
    layers = [Shift(-0.5, "encoder.center"), first]
    if attention:
        layers += [SEBlock("encoder.se", c, gate), SpatialAttention("encoder.sa", sa_kernel, gate)]
    layers += [Conv("encoder.project", c, 2, (1, 1)), Flatten(), Dense("encoder.fc", 2 * na * na, m)]
    encoder = Sequential("encoder", layers)
    decoder = _decoder(na, m, c_dec, 3, output)
    if attention and forged_input:
        arch = "clnet"
    elif not attention and not forged_input:
        arch = "clnet-noattn"
    else:
        arch = f"clnet-attn{int(attention)}-forged{int(forged_input)}"
    config = {"c": c, "c_dec": c_dec, "gate": gate, "output": output, "sa_kernel": sa_kernel}
    return _finish(arch, eta, na, encoder, decoder, seed, dtype, config)


def assemble_crnet_baseline(
    eta, na: int = 32, *, c_dec: int = 8, seed: int = 0, output: str = "sigmoid", dtype=np.float32
) -> Autoencoder:
    """CRNet-style baseline: dual-path encoder (3x3 path | 1x9 -> 9x1 path,
    merged 1x1) and the same decoder family with 1x9/9x1 refine blocks."""
    eta = parse_eta(eta)
    m = codeword_length(na, eta)
    encoder = Sequential(
        "encoder",
        [
            Shift(-0.5, "encoder.center"),
            DualPathBlock("encoder.dual", 2, 2, 2, side=9, residual=False),
            Flatten(),
            Dense("encoder.fc", 2 * na * na, m),
        ],
    )
    decoder = _decoder(na, m, c_dec, 9, output)
    config = {"c": 2, "c_dec": c_dec, "output": output}
    return _finish("crnet-base", eta, na, encoder, decoder, seed, dtype, config)


def build_model(arch: str, eta, na: int = 32, seed: int = 0, dtype=np.float32, **options) -> Autoencoder:
    if arch == "clnet":
        return assemble_clnet(eta, na, seed=seed, dtype=dtype, **options)
    if arch == "clnet-noattn":
        return assemble_clnet(eta, na, seed=seed, dtype=dtype, attention=False, forged_input=False, **options)
    if arch == "crnet-base":
        # attention options have no meaning for the baseline
        for key in ("c", "gate", "sa_kernel"):
            options.pop(key, None)
        return assemble_crnet_baseline(eta, na, seed=seed, dtype=dtype, **options)
    raise ValueError(f"unknown architecture {arch!r}; choose from {ARCHITECTURES}")


# --------------------------------------------------------------------------- checkpoints


def _pack_arrays(arrays: "OrderedDict[str, np.ndarray]") -> bytes:
    chunks = []
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(chunks)


def _unpack_arrays(payload: bytes, count: int, path) -> "OrderedDict[str, np.ndarray]":
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(payload):
            raise TruncatedPayloadError(f"{path}: parameter list ends early")
        chunk = payload[pos : pos + n]
        pos += n
        return chunk

    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        name = take(n).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if shape else 1
        out[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(payload):
        raise MalformedHeaderError(f"{path}: {len(payload) - pos} unread payload bytes")
    return out


def save_checkpoint(path, model: Autoencoder, *, extra_arrays=None, state: dict | None = None) -> None:
    """Write parameters (and optional optimizer arrays / loop state)."""
    arrays = OrderedDict((k, v) for k, v in model.params.arrays().items())
    extra = OrderedDict(extra_arrays or {})
    payload = _pack_arrays(arrays) + _pack_arrays(extra)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        **model.config,
        "n_params": len(arrays),
        "n_extra": len(extra),
        "payload_bytes": len(payload),
        "state": state or {},
    }
    write_container(path, header, payload)


def load_checkpoint(path, with_state: bool = False):
    """Rebuild the model stored at ``path``.

    With ``with_state`` returns ``(model, extra_arrays, state)``.
    """
    h, payload = read_container(path, CHECKPOINT_FORMAT, lambda h: int(h["payload_bytes"]))
    try:
        n_params, n_extra = int(h["n_params"]), int(h["n_extra"])
        options = {k: h[k] for k in ("c", "c_dec", "gate", "output", "sa_kernel") if k in h}
        model = build_model(h["arch"], h["eta"], int(h["na"]), seed=int(h["seed"]), **options)
    except (KeyError, ValueError) as err:
        raise MalformedHeaderError(f"{path}: bad checkpoint header ({err})") from None
    arrays = _unpack_arrays(payload, n_params + n_extra, path)
    names = list(arrays)
    if names[:n_params] != model.params.names():
        raise MalformedHeaderError(f"{path}: parameter names do not match architecture {h['arch']}")
    for name in names[:n_params]:
        t = model.params[name]
        if arrays[name].shape != t.shape:
            raise MalformedHeaderError(f"{path}: {name} has shape {arrays[name].shape}, expected {t.shape}")
        t.data = arrays[name]
    if with_state:
        extra = OrderedDict((k, arrays[k]) for k in names[n_params:])
        return model, extra, h.get("state", {})
    return model
