"""Differentiable layers and composite blocks.

A layer owns no arrays. It declares parameter shapes, runs its forward pass
against a :class:`ModelParams` lookup, and describes itself as a flat list of
:class:`LayerOp` rows for the complexity auditor. All shapes in descriptions
are per sample.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from math import prod
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "LayerOp",
    "ParamSpec",
    "ModelParams",
    "Layer",
    "Conv",
    "Dense",
    "Act",
    "Flatten",
    "Reshape",
    "Shift",
    "Sequential",
    "ForgedComplexInput",
    "SEBlock",
    "SpatialAttention",
    "DualPathBlock",
    "crblock",
    "GATES",
]

GATES = ("sigmoid", "hard_sigmoid")


@dataclass(frozen=True)
class LayerOp:
    """One primitive step of a forward pass, described by shape only."""

    name: str
    kind: str
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    kernel: tuple[int, int] | None = None
    bias: bool = False


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    fan_in: int  # 0 marks a bias (zero-initialised)


class ModelParams:
    """Ordered, uniquely named parameter tensors (the autodiff leaves)."""

    def __init__(self, tensors: "OrderedDict[str, Tensor] | None" = None):
        self._t: OrderedDict[str, Tensor] = OrderedDict()
        for name, t in (tensors or {}).items():
            self.add(name, t)

    def add(self, name: str, t: Tensor):
        if name in self._t:
            raise ValueError(f"duplicate parameter name {name!r}")
        t.requires_grad = True
        t.name = name
        self._t[name] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._t[name]

    def __contains__(self, name):
        return name in self._t

    def __iter__(self) -> Iterator[str]:
        return iter(self._t)

    def __len__(self):
        return len(self._t)

    def items(self):
        return self._t.items()

    def names(self) -> list[str]:
        return list(self._t)

    def tensors(self) -> list[Tensor]:
        return list(self._t.values())

    def num_parameters(self) -> int:
        return sum(t.size for t in self._t.values())

    @property
    def dtype(self):
        return next(iter(self._t.values())).dtype

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(OrderedDict((k, Tensor(v.data, dtype=dtype)) for k, v in self._t.items()))

    def copy(self) -> "ModelParams":
        return self.astype(self.dtype)

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data) for k, v in self._t.items())

    @classmethod
    def initialize(cls, specs: list[ParamSpec], rng: np.random.Generator, dtype=np.float32) -> "ModelParams":
        """Weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)) (He-uniform); biases zero.

        The narrower ``1/sqrt(fan_in)`` bound shrinks the small input
        variations layer by layer until training stalls at the mean predictor.
        """
        params = cls()
        for s in specs:
            if s.fan_in == 0:
                arr = np.zeros(s.shape)
            else:
                bound = np.sqrt(6.0 / s.fan_in)
                arr = rng.uniform(-bound, bound, size=s.shape)
            params.add(s.name, Tensor(arr, dtype=dtype))
        return params


class Layer:
    name: str = ""

    def param_specs(self) -> list[ParamSpec]:
        return []

    def children(self) -> list["Layer"]:
        return []

    def forward(self, p: ModelParams, x: Tensor) -> Tensor:
        raise NotImplementedError

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def describe(self, in_shape: tuple[int, ...]) -> list[LayerOp]:
        return []

    def __call__(self, p, x):
        return self.forward(p, x)


class Act(Layer):
    def __init__(self, kind: str, name: str = ""):
        if kind not in ("relu", "sigmoid", "hard_sigmoid"):
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind
        self.name = name or kind

    def forward(self, p, x):
        return ad.activation(x, self.kind)

    def describe(self, in_shape):
        return [LayerOp(self.name, self.kind, in_shape, in_shape)]


class Conv(Layer):
    """Stride-1 'same' convolution, optionally followed by an activation."""

    def __init__(self, name: str, c_in: int, c_out: int, kernel=(3, 3), bias: bool = True, act: str | None = None):
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"{name}: kernel extents must be odd, got {kh}x{kw}")
        self.name, self.c_in, self.c_out = name, c_in, c_out
        self.kernel = (kh, kw)
        self.bias = bias
        self.act = Act(act, f"{name}.{act}") if act else None

    def param_specs(self):
        kh, kw = self.kernel
        specs = [ParamSpec(f"{self.name}.weight", (self.c_out, self.c_in, kh, kw), self.c_in * kh * kw)]
        if self.bias:
            specs.append(ParamSpec(f"{self.name}.bias", (self.c_out,), 0))
        return specs

    def forward(self, p, x):
        w = p[f"{self.name}.weight"]
        b = p[f"{self.name}.bias"] if self.bias else None
        y = ad.pointwise_conv(x, w, b) if self.kernel == (1, 1) else ad.conv2d(x, w, b)
        return self.act.forward(p, y) if self.act else y

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.c_in:
            raise ad.ShapeError(f"{self.name}: expected {self.c_in} channels, got {c}")
        return (self.c_out, h, w)

    def describe(self, in_shape):
        out = self.output_shape(in_shape)
        ops = [LayerOp(self.name, "conv", in_shape, out, self.kernel, self.bias)]
        if self.act:
            ops += self.act.describe(out)
        return ops


class Dense(Layer):
    def __init__(self, name: str, d_in: int, d_out: int, bias: bool = True, act: str | None = None):
        self.name, self.d_in, self.d_out, self.bias = name, d_in, d_out, bias
        self.act = Act(act, f"{name}.{act}") if act else None

    def param_specs(self):
        specs = [ParamSpec(f"{self.name}.weight", (self.d_out, self.d_in), self.d_in)]
        if self.bias:
            specs.append(ParamSpec(f"{self.name}.bias", (self.d_out,), 0))
        return specs

    def forward(self, p, x):
        b = p[f"{self.name}.bias"] if self.bias else None
        y = ad.fully_connected(x, p[f"{self.name}.weight"], b)
        return self.act.forward(p, y) if self.act else y

    def output_shape(self, in_shape):
        if in_shape != (self.d_in,):
            raise ad.ShapeError(f"{self.name}: expected input ({self.d_in},), got {in_shape}")
        return (self.d_out,)

    def describe(self, in_shape):
        out = self.output_shape(in_shape)
        ops = [LayerOp(self.name, "dense", in_shape, out, None, self.bias)]
        if self.act:
            ops += self.act.describe(out)
        return ops


class Shift(Layer):
    """Add a fixed constant to every element (no parameters).

    Used to center ``[0, 1]``-normalized inputs before the first layer; it is
    equivalent to re-parametrizing that layer's bias, so locality and the
    function class are unchanged.
    """

    def __init__(self, offset: float, name: str = "shift"):
        self.offset = float(offset)
        self.name = name

    def forward(self, p, x):
        return ad.shift(x, self.offset)

    def describe(self, in_shape):
        return [LayerOp(self.name, "shift", in_shape, in_shape)]


class Flatten(Layer):
    def __init__(self, name: str = "flatten"):
        self.name = name

    def forward(self, p, x):
        lead = x.shape[:-3]
        return ad.reshape(x, lead + (prod(x.shape[-3:]),))

    def output_shape(self, in_shape):
        return (prod(in_shape),)

    def describe(self, in_shape):
        return [LayerOp(self.name, "reshape", in_shape, self.output_shape(in_shape))]


class Reshape(Layer):
    def __init__(self, shape: tuple[int, ...], name: str = "reshape"):
        self.shape = tuple(shape)
        self.name = name

    def forward(self, p, x):
        lead = x.shape[:-1]
        return ad.reshape(x, lead + self.shape)

    def output_shape(self, in_shape):
        if prod(in_shape) != prod(self.shape):
            raise ad.ShapeError(f"{self.name}: cannot reshape {in_shape} to {self.shape}")
        return self.shape

    def describe(self, in_shape):
        return [LayerOp(self.name, "reshape", in_shape, self.output_shape(in_shape))]


class Sequential(Layer):
    def __init__(self, name: str, layers: list[Layer]):
        self.name = name
        self.layers = list(layers)

    def children(self):
        return self.layers

    def param_specs(self):
        return [s for layer in self.layers for s in layer.param_specs()]

    def forward(self, p, x):
        for layer in self.layers:
            x = layer.forward(p, x)
        return x

    def output_shape(self, in_shape):
        for layer in self.layers:
            in_shape = layer.output_shape(in_shape)
        return in_shape

    def describe(self, in_shape):
        ops = []
        for layer in self.layers:
            ops += layer.describe(in_shape)
            in_shape = layer.output_shape(in_shape)
        return ops


class ForgedComplexInput(Conv):
    """1x1 convolution coupling the real and imaginary plane of each entry.

    Output channel ``c`` at ``(m, n)`` is ``w[c,0]*re[m,n] + w[c,1]*im[m,n] + b[c]``:
    no spatial mixing, so each complex coefficient is embedded on its own.
    """

    def __init__(self, name: str = "forged_input", channels: int = 32):
        super().__init__(name, 2, channels, kernel=(1, 1), bias=True)

    def forward(self, p, x):
        c = x.shape[-3]
        if c != 2:
            raise ad.ShapeError(f"{self.name}: input must have 2 planes (real, imag), got {c}")
        return super().forward(p, x)


class SEBlock(Layer):
    """Squeeze-and-excitation channel attention with reduction ratio 2.

    ``s = gate(W2 relu(W1 avgpool(I)))``, output channel ``c`` is ``s_c * I_c``.
    """

    def __init__(self, name: str, channels: int, gate: str = "hard_sigmoid"):
        if channels % 2:
            raise ValueError(f"{name}: channel count must be even for C/2 reduction")
        if gate not in GATES:
            raise ValueError(f"{name}: gate must be one of {GATES}")
        self.name, self.channels, self.gate = name, channels, gate

    def param_specs(self):
        c = self.channels
        return [
            ParamSpec(f"{self.name}.W1", (c // 2, c), c),
            ParamSpec(f"{self.name}.W2", (c, c // 2), c // 2),
        ]

    def attention(self, p, x):
        z = ad.global_avg_pool(x)
        h = ad.relu(ad.fully_connected(z, p[f"{self.name}.W1"]))
        return ad.activation(ad.fully_connected(h, p[f"{self.name}.W2"]), self.gate)

    def forward(self, p, x):
        if x.shape[-3] != self.channels:
            raise ad.ShapeError(f"{self.name}: expected {self.channels} channels, got {x.shape[-3]}")
        return ad.scale_broadcast(x, self.attention(p, x))

    def output_shape(self, in_shape):
        if in_shape[0] != self.channels:
            raise ad.ShapeError(f"{self.name}: expected {self.channels} channels, got {in_shape[0]}")
        return in_shape

    def describe(self, in_shape):
        c, h = self.channels, self.channels // 2
        n = self.name
        return [
            LayerOp(f"{n}.squeeze", "global_avg_pool", in_shape, (c,)),
            LayerOp(f"{n}.W1", "dense", (c,), (h,)),
            LayerOp(f"{n}.relu", "relu", (h,), (h,)),
            LayerOp(f"{n}.W2", "dense", (h,), (c,)),
            LayerOp(f"{n}.gate", self.gate, (c,), (c,)),
            LayerOp(f"{n}.scale", "scale", in_shape, in_shape),
        ]


class SpatialAttention(Layer):
    """Spatial mask from channel-avg and channel-max maps through a k x k conv."""

    def __init__(self, name: str, kernel: int = 7, gate: str = "hard_sigmoid"):
        if kernel % 2 == 0:
            raise ValueError(f"{name}: kernel must be odd")
        if gate not in GATES:
            raise ValueError(f"{name}: gate must be one of {GATES}")
        self.name, self.kernel, self.gate = name, kernel, gate

    def param_specs(self):
        k = self.kernel
        return [ParamSpec(f"{self.name}.weight", (1, 2, k, k), 2 * k * k), ParamSpec(f"{self.name}.bias", (1,), 0)]

    def mask(self, p, x):
        desc = ad.concat([ad.channel_pool(x, "avg"), ad.channel_pool(x, "max")])
        logits = ad.conv2d(desc, p[f"{self.name}.weight"], p[f"{self.name}.bias"])
        return ad.activation(logits, self.gate)

    def forward(self, p, x):
        return ad.scale_broadcast(x, self.mask(p, x))

    def describe(self, in_shape):
        _, h, w = in_shape
        n, k = self.name, self.kernel
        return [
            LayerOp(f"{n}.avg", "channel_avg", in_shape, (1, h, w)),
            LayerOp(f"{n}.max", "channel_max", in_shape, (1, h, w)),
            LayerOp(f"{n}.concat", "concat", (2, h, w), (2, h, w)),
            LayerOp(f"{n}.conv", "conv", (2, h, w), (1, h, w), (k, k), True),
            LayerOp(f"{n}.gate", self.gate, (1, h, w), (1, h, w)),
            LayerOp(f"{n}.scale", "scale", in_shape, in_shape),
        ]


class DualPathBlock(Layer):
    """Two parallel conv paths merged by a 1x1 conv.

    Path A is a 3x3 conv; path B is a ``1 x side`` conv then a ``side x 1``
    conv. Convs inside the paths are ReLU-activated. With ``residual`` the
    input is added to the merged output, which needs ``c_in == c_out``.
    """

    def __init__(self, name: str, c_in: int, c_mid: int, c_out: int, side: int = 3, residual: bool = True):
        if residual and c_in != c_out:
            raise ValueError(f"{name}: residual needs c_in == c_out")
        self.name, self.side, self.residual = name, side, residual
        self.c_in, self.c_out = c_in, c_out
        self.path_a = Conv(f"{name}.path_a", c_in, c_mid, (3, 3), act="relu")
        self.path_b1 = Conv(f"{name}.path_b1", c_in, c_mid, (1, side), act="relu")
        self.path_b2 = Conv(f"{name}.path_b2", c_mid, c_mid, (side, 1), act="relu")
        self.merge = Conv(f"{name}.merge", 2 * c_mid, c_out, (1, 1))

    def children(self):
        return [self.path_a, self.path_b1, self.path_b2, self.merge]

    def param_specs(self):
        return [s for layer in self.children() for s in layer.param_specs()]

    def forward(self, p, x):
        a = self.path_a.forward(p, x)
        b = self.path_b2.forward(p, self.path_b1.forward(p, x))
        y = self.merge.forward(p, ad.concat([a, b]))
        return ad.add(x, y) if self.residual else y

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.c_in:
            raise ad.ShapeError(f"{self.name}: expected {self.c_in} channels, got {c}")
        return (self.c_out, h, w)

    def describe(self, in_shape):
        _, h, w = in_shape
        c_mid = self.path_a.c_out
        ops = self.path_a.describe(in_shape)
        ops += self.path_b1.describe(in_shape)
        ops += self.path_b2.describe((c_mid, h, w))
        ops.append(LayerOp(f"{self.name}.concat", "concat", (2 * c_mid, h, w), (2 * c_mid, h, w)))
        ops += self.merge.describe((2 * c_mid, h, w))
        out = (self.c_out, h, w)
        if self.residual:
            ops.append(LayerOp(f"{self.name}.residual", "add", out, out))
        return ops


def crblock(name: str, channels: int, side: int = 3) -> DualPathBlock:
    """Residual refinement block; ``side=3`` is the lightweight variant, ``side=9`` the original."""
    return DualPathBlock(name, channels, channels, channels, side=side, residual=True)
