"""Analytic FLOP / parameter accounting for assembled models.

Counting convention:

* conv: ``MACs = C_out * C_in * kh * kw * H' * W'``; dense: ``MACs = D_in * D_out``;
  ``flops = 2 * MACs``; bias additions are folded into the MAC.
* pooling (global average, channel mean, channel max): 1 flop per input element.
* relu, attention scaling, residual add, input centering: 1 flop per element.
* hard sigmoid: 3 flops per element (add + two clamps; the divide is a
  constant multiply folded into the next op).
* sigmoid: 4 flops per element plus one exponential, tallied separately as a
  transcendental.
* reshape / concat: free.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from math import prod

from .blocks import (
    Act,
    Conv,
    Dense,
    DualPathBlock,
    Flatten,
    LayerOp,
    Reshape,
    SEBlock,
    Sequential,
    Shift,
    SpatialAttention,
)
from .models import Autoencoder, format_eta, parse_eta

__all__ = [
    "LayerCount",
    "FlopReport",
    "count_layer",
    "flop_report",
    "recount_by_traversal",
    "transcendental_census",
    "Reduction",
    "compare",
    "compare_series",
    "format_comparison",
]

_PER_ELEMENT_OUT = {"relu": 1, "hard_sigmoid": 3, "sigmoid": 4, "scale": 1, "add": 1, "shift": 1}
_PER_ELEMENT_IN = {"global_avg_pool": 1, "channel_avg": 1, "channel_max": 1}
_FREE = {"reshape", "concat"}


@dataclass(frozen=True)
class LayerCount:
    macs: int = 0
    flops: int = 0
    params: int = 0
    transcendentals: int = 0


def count_layer(op: LayerOp) -> LayerCount:
    if not op.in_shape or not op.out_shape or any(d is None or d < 1 for d in op.in_shape + op.out_shape):
        raise ValueError(f"{op.name}: descriptor is not fully shaped ({op.in_shape} -> {op.out_shape})")
    if op.kind == "conv":
        if op.kernel is None:
            raise ValueError(f"{op.name}: conv descriptor lacks a kernel size")
        (c_in, _, _), (c_out, h, w) = op.in_shape, op.out_shape
        kh, kw = op.kernel
        weights = c_out * c_in * kh * kw
        macs = weights * h * w
        return LayerCount(macs, 2 * macs, weights + (c_out if op.bias else 0))
    if op.kind == "dense":
        (d_in,), (d_out,) = op.in_shape, op.out_shape
        macs = d_in * d_out
        return LayerCount(macs, 2 * macs, macs + (d_out if op.bias else 0))
    if op.kind in _PER_ELEMENT_OUT:
        n = prod(op.out_shape)
        return LayerCount(0, _PER_ELEMENT_OUT[op.kind] * n, 0, n if op.kind == "sigmoid" else 0)
    if op.kind in _PER_ELEMENT_IN:
        return LayerCount(0, _PER_ELEMENT_IN[op.kind] * prod(op.in_shape))
    if op.kind in _FREE:
        return LayerCount()
    raise ValueError(f"{op.name}: unknown layer kind {op.kind!r}")


@dataclass
class FlopReport:
    model_id: str
    arch: str
    eta: Fraction
    rows: list[tuple[LayerOp, LayerCount]] = field(default_factory=list)

    def _total(self, attr) -> int:
        return sum(getattr(c, attr) for _, c in self.rows)

    @property
    def macs(self) -> int:
        return self._total("macs")

    @property
    def flops(self) -> int:
        return self._total("flops")

    @property
    def params(self) -> int:
        return self._total("params")

    @property
    def transcendentals(self) -> int:
        return self._total("transcendentals")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "kind", "output_shape", "macs", "flops", "params", "transcendentals"])
        for op, c in self.rows:
            shape = "x".join(str(d) for d in op.out_shape)
            w.writerow([op.name, op.kind, shape, c.macs, c.flops, c.params, c.transcendentals])
        w.writerow(["TOTAL", "", "", self.macs, self.flops, self.params, self.transcendentals])
        return buf.getvalue()

    def to_text(self) -> str:
        fields = {
            "model": self.model_id,
            "arch": self.arch,
            "eta": format_eta(self.eta),
            "layers": len(self.rows),
            "macs": self.macs,
            "flops": self.flops,
            "params": self.params,
            "transcendentals": self.transcendentals,
        }
        return "".join(f"{k}={v}\n" for k, v in fields.items())

    @staticmethod
    def parse_summary(text: str) -> dict:
        """Read back the key=value summary written by :meth:`to_text`."""
        out = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"malformed summary line {line!r}")
            out[key.strip()] = value.strip()
        for key in ("macs", "flops", "params", "transcendentals"):
            out[key] = int(out[key])
        out["eta"] = parse_eta(out["eta"])
        return out


def flop_report(model: Autoencoder) -> FlopReport:
    ops = model.encoder.describe(model.input_shape) + model.decoder.describe((model.codeword_length,))
    return FlopReport(model.model_id, model.arch, model.eta, [(op, count_layer(op)) for op in ops])


def transcendental_census(model: Autoencoder) -> int:
    """Exponential evaluations per forward pass (one per sigmoid element)."""
    return flop_report(model).transcendentals


# --------------------------------------------------------------------------- independent recount


def recount_by_traversal(model: Autoencoder) -> dict:
    """Second, independent tally: walks the layer objects directly.

    Conv MACs are enumerated output position by output position; parameter
    counts come from the materialised arrays. Shares no code with
    :func:`count_layer`.
    """
    tally = {"macs": 0, "flops": 0, "transcendentals": 0}

    def elementwise(kind, n):
        cost = {"relu": 1, "hard_sigmoid": 3, "sigmoid": 4}[kind]
        tally["flops"] += cost * n
        if kind == "sigmoid":
            tally["transcendentals"] += n

    def walk(layer, shape):
        if isinstance(layer, Sequential):
            for child in layer.layers:
                shape = walk(child, shape)
            return shape
        if isinstance(layer, DualPathBlock):
            a = walk(layer.path_a, shape)
            b = walk(layer.path_b2, walk(layer.path_b1, shape))
            out = walk(layer.merge, (a[0] + b[0],) + a[1:])
            if layer.residual:
                tally["flops"] += out[0] * out[1] * out[2]
            return out
        if isinstance(layer, Conv):
            c_in, h, w = shape
            kh, kw = layer.kernel
            ph, pw = (kh - 1) // 2, (kw - 1) // 2
            macs = 0
            for y in range(h + 2 * ph - kh + 1):
                for x in range(w + 2 * pw - kw + 1):
                    macs += layer.c_out * c_in * kh * kw
            tally["macs"] += macs
            tally["flops"] += 2 * macs
            out = (layer.c_out, h + 2 * ph - kh + 1, w + 2 * pw - kw + 1)
            if layer.act:
                elementwise(layer.act.kind, out[0] * out[1] * out[2])
            return out
        if isinstance(layer, Dense):
            macs = 0
            for _ in range(layer.d_out):
                macs += shape[0]
            tally["macs"] += macs
            tally["flops"] += 2 * macs
            if layer.act:
                elementwise(layer.act.kind, layer.d_out)
            return (layer.d_out,)
        if isinstance(layer, Act):
            n = 1
            for d in shape:
                n *= d
            elementwise(layer.kind, n)
            return shape
        if isinstance(layer, SEBlock):
            c, h, w = shape
            r = layer.channels // 2
            tally["flops"] += c * h * w  # squeeze
            tally["macs"] += c * r + r * c
            tally["flops"] += 2 * (c * r + r * c) + r  # two dense + relu
            elementwise(layer.gate, c)
            tally["flops"] += c * h * w  # rescale
            return shape
        if isinstance(layer, SpatialAttention):
            c, h, w = shape
            k = layer.kernel
            tally["flops"] += 2 * c * h * w  # channel mean + channel max
            conv_macs = 2 * k * k * h * w
            tally["macs"] += conv_macs
            tally["flops"] += 2 * conv_macs
            elementwise(layer.gate, h * w)
            tally["flops"] += c * h * w  # mask multiply
            return shape
        if isinstance(layer, Shift):
            tally["flops"] += shape[0] * shape[1] * shape[2]
            return shape
        if isinstance(layer, Flatten):
            return (shape[0] * shape[1] * shape[2],)
        if isinstance(layer, Reshape):
            return layer.shape
        raise TypeError(f"recount: no rule for {type(layer).__name__}")

    walk(model.decoder, (walk(model.encoder, model.input_shape)[0],))
    tally["params"] = sum(t.data.size for t in model.params.tensors())
    return tally


# --------------------------------------------------------------------------- comparison


@dataclass(frozen=True)
class Reduction:
    eta: Fraction
    flops_a: int
    flops_b: int

    @property
    def reduction(self) -> float:
        """Fraction of ``b``'s flops saved by ``a``."""
        return (self.flops_b - self.flops_a) / self.flops_b


def _flops_eta(r):
    if isinstance(r, FlopReport):
        return r.flops, r.eta
    return int(r["flops"]), parse_eta(r["eta"])


def compare(report_a, report_b) -> Reduction:
    """Reduction of ``report_a`` relative to ``report_b`` (same eta required).

    Accepts :class:`FlopReport` objects or parsed summaries.
    """
    fa, ea = _flops_eta(report_a)
    fb, eb = _flops_eta(report_b)
    if ea != eb:
        raise ValueError(f"cannot compare reports at different compression ratios ({ea} vs {eb})")
    return Reduction(ea, fa, fb)


def compare_series(reports_a, reports_b) -> tuple[list[Reduction], float]:
    """Pair reports by eta; returns per-eta reductions (largest eta first) and their mean."""
    by_eta_b = {}
    for r in reports_b:
        by_eta_b[_flops_eta(r)[1]] = r
    rows = []
    for r in reports_a:
        eta = _flops_eta(r)[1]
        if eta not in by_eta_b:
            raise ValueError(f"no baseline report at eta={eta}")
        rows.append(compare(r, by_eta_b[eta]))
    if len(rows) != len(by_eta_b):
        raise ValueError("report sets cover different compression ratios")
    rows.sort(key=lambda row: row.eta, reverse=True)
    return rows, sum(row.reduction for row in rows) / len(rows)


def format_comparison(rows: list[Reduction], average: float, names=("clnet", "baseline")) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eta", f"{names[0]}_flops", f"{names[1]}_flops", "reduction_pct"])
    for row in rows:
        w.writerow([format_eta(row.eta), row.flops_a, row.flops_b, f"{100 * row.reduction:.2f}"])
    w.writerow(["average", "", "", f"{100 * average:.2f}"])
    return buf.getvalue()
