"""Dense tensors with tape-based reverse-mode differentiation.

Every operation accepts a single sample (``C x H x W`` / ``D``) or a batch with
one extra leading axis (``N x C x H x W`` / ``N x D``). Operations run eagerly;
when a :class:`Tape` is active and an input requires gradients, the operation
is appended to the tape together with a closure computing its vector-Jacobian
product.

    >>> x = Tensor([3.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     y = mul(x, x)
    ...     loss = sum_all(y)
    >>> tape.backward(loss, [x])[0]
    array([6.])
"""

from __future__ import annotations

import contextvars
from collections import Counter
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "OpCounter",
    "ShapeError",
    "conv2d",
    "pointwise_conv",
    "fully_connected",
    "global_avg_pool",
    "channel_pool",
    "activation",
    "relu",
    "sigmoid",
    "hard_sigmoid",
    "scale_broadcast",
    "add",
    "shift",
    "mul",
    "concat",
    "reshape",
    "sum_all",
    "mean_squared_error",
]

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("tape", default=None)
_ACTIVE_COUNTER: contextvars.ContextVar["OpCounter | None"] = contextvars.ContextVar(
    "op_counter", default=None
)


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class Tensor:
    """An n-dimensional array node.

    ``data`` is a C-ordered numpy array; float32 is used for training and
    evaluation, float64 for gradient checks. Leaves that should receive
    gradients are created with ``requires_grad=True``.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_from_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype, copy=True, order="C")
        if arr.dtype.kind not in "fc":
            arr = arr.astype(np.float64)
        if any(n < 1 for n in arr.shape):
            raise ShapeError(f"all extents must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._from_op = False

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.ascontiguousarray(arr)
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        t._from_op = True
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)


class _Record:
    __slots__ = ("op", "output", "inputs", "vjp")

    def __init__(self, op, output, inputs, vjp):
        self.op = op
        self.output = output
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of differentiable operations.

    A tape is owned by one thread of control. Use it as a context manager to
    make it the active recorder, then call :meth:`backward` on a scalar.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._produced: set[int] = set()
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False

    def __len__(self):
        return len(self.records)

    def record(self, op: str, output: Tensor, inputs: Sequence[Tensor], vjp: Callable):
        for t in inputs:
            if t.requires_grad and t._from_op and id(t) not in self._produced:
                raise RuntimeError(f"{op}: input was produced outside this tape")
        self.records.append(_Record(op, output, tuple(inputs), vjp))
        self._produced.add(id(output))

    def backward(self, loss: Tensor, wrt: Sequence[Tensor] | None = None) -> list[np.ndarray]:
        """Propagate d(loss)/d(.) back through the recorded operations.

        Returns one gradient array per tensor in ``wrt`` (default: every leaf
        seen on the tape, in first-use order). Leaves not reached by the graph
        get zeros. Each leaf's ``.grad`` is set to its gradient.
        """
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if wrt is None:
            wrt = self.leaves()
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            in_grads = rec.vjp(g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        out = []
        for leaf in wrt:
            g = grads.get(id(leaf))
            if g is None:
                g = np.zeros_like(leaf.data)
            g = g.reshape(leaf.shape).astype(leaf.dtype, copy=False)
            leaf.grad = g
            out.append(g)
        return out

    def leaves(self) -> list[Tensor]:
        seen: dict[int, Tensor] = {}
        for rec in self.records:
            for t in rec.inputs:
                if t.requires_grad and not t._from_op:
                    seen.setdefault(id(t), t)
        return list(seen.values())


class OpCounter:
    """Context manager tallying multiply-accumulates actually performed.

    Counts come from the runtime array shapes of each conv / dense call, so
    they serve as an independent check on analytic FLOP formulas.
    """

    def __init__(self):
        self.macs: Counter = Counter()
        self.calls: Counter = Counter()
        self._token = None

    def __enter__(self) -> "OpCounter":
        self._token = _ACTIVE_COUNTER.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_COUNTER.reset(self._token)
        return False

    @property
    def total_macs(self) -> int:
        return sum(self.macs.values())

    def add(self, kind: str, macs: int):
        self.macs[kind] += int(macs)
        self.calls[kind] += 1


def _count(kind: str, macs: int):
    counter = _ACTIVE_COUNTER.get()
    if counter is not None:
        counter.add(kind, macs)


def _emit(op: str, out: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    tape = _ACTIVE_TAPE.get()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, needs)
    if needs:
        tape.record(op, result, inputs, vjp)
    return result


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _batched(x: Tensor, sample_ndim: int, op: str) -> tuple[np.ndarray, bool]:
    """Return ``x.data`` with a leading batch axis and whether one was added."""
    if x.ndim == sample_ndim:
        return x.data[None], True
    if x.ndim == sample_ndim + 1:
        return x.data, False
    raise ShapeError(f"{op}: expected {sample_ndim}-D sample or batch, got shape {x.shape}")


# --------------------------------------------------------------------------- convolution


def _im2col(xb: np.ndarray, kh: int, kw: int, ph: int, pw: int) -> np.ndarray:
    """Patch stack of shape ``(N, C * kh * kw, H' * W')`` for stride-1 correlation."""
    n, c, h, w = xb.shape
    ho, wo = h + 2 * ph - kh + 1, w + 2 * pw - kw + 1
    xpad = np.pad(xb, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xb.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xpad[:, :, i : i + ho, j : j + wo]
    return cols.reshape(n, c * kh * kw, ho * wo)


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None, padding=None) -> Tensor:
    """Stride-1 cross-correlation with zero padding.

    ``padding`` defaults to ``((kh-1)//2, (kw-1)//2)`` which keeps the spatial
    size for odd kernels.
    """
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    xb, squeeze = _batched(x, 3, "conv2d")
    if kernels.ndim != 4:
        raise ShapeError(f"conv2d: kernels must be C_out x C_in x kh x kw, got {kernels.shape}")
    c_out, c_in, kh, kw = kernels.shape
    n, c, h, w = xb.shape
    if c != c_in:
        raise ShapeError(f"conv2d: input has {c} channels but kernels expect {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    if padding is None:
        padding = ((kh - 1) // 2, (kw - 1) // 2)
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    ho, wo = h + 2 * ph - kh + 1, w + 2 * pw - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} too large for input {h}x{w} with padding {padding}")

    wk = kernels.data
    dtype = np.result_type(xb, wk)
    if kh == 1 and kw == 1 and ph == 0 and pw == 0:
        cols = None
        out = np.einsum("oc,nchw->nohw", wk[:, :, 0, 0], xb, optimize=True)
    else:
        cols = _im2col(xb, kh, kw, ph, pw)
        out = np.matmul(wk.reshape(c_out, -1), cols).reshape(n, c_out, ho, wo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out, dtype=dtype)
    _count("conv", n * c_out * c_in * kh * kw * ho * wo)

    def vjp(g):
        gb = g[None] if squeeze else g
        if cols is None:
            dw = np.einsum("nohw,nchw->oc", gb, xb, optimize=True)[:, :, None, None]
            dx = np.einsum("nohw,oc->nchw", gb, wk[:, :, 0, 0], optimize=True)
        else:
            gm = gb.reshape(n, c_out, ho * wo)
            dw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wk.shape)
            # input gradient = correlation of the output gradient with the flipped, transposed kernels
            flipped = np.ascontiguousarray(wk[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            gcols = _im2col(gb, kh, kw, kh - 1 - ph, kw - 1 - pw)
            dx = np.matmul(flipped.reshape(c_in, -1), gcols).reshape(n, c_in, h, w)
        db = gb.sum(axis=(0, 2, 3)) if bias is not None else None
        if squeeze:
            dx = dx[0]
        return dx, dw, db

    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    return _emit("conv2d", out[0] if squeeze else out, inputs, vjp)


def pointwise_conv(x: Tensor, kernels: Tensor, bias: Tensor | None = None) -> Tensor:
    """1x1 convolution: a per-location linear map over channels."""
    if kernels.ndim != 4 or kernels.shape[2:] != (1, 1):
        raise ShapeError(f"pointwise_conv: kernels must be C_out x C_in x 1 x 1, got {kernels.shape}")
    return conv2d(x, kernels, bias, padding=(0, 0))


# --------------------------------------------------------------------------- dense


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    x, weight = _as_tensor(x), _as_tensor(weight)
    xb, squeeze = _batched(x, 1, "fully_connected")
    if weight.ndim != 2 or weight.shape[1] != xb.shape[1]:
        raise ShapeError(f"fully_connected: weight {weight.shape} incompatible with input {x.shape}")
    d_out = weight.shape[0]
    if bias is not None and bias.shape != (d_out,):
        raise ShapeError(f"fully_connected: bias shape {bias.shape} != ({d_out},)")
    out = xb @ weight.data.T
    if bias is not None:
        out = out + bias.data
    _count("dense", xb.shape[0] * weight.shape[0] * weight.shape[1])

    def vjp(g):
        gb = g[None] if squeeze else g
        dx = gb @ weight.data
        dw = gb.T @ xb
        db = gb.sum(axis=0) if bias is not None else None
        return (dx[0] if squeeze else dx), dw, db

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit("fully_connected", out[0] if squeeze else out, inputs, vjp)


# --------------------------------------------------------------------------- pooling


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the two spatial axes: ``C x H x W -> C``."""
    xb, squeeze = _batched(x, 3, "global_avg_pool")
    h, w = xb.shape[2:]
    out = xb.mean(axis=(2, 3))

    def vjp(g):
        gb = g[None] if squeeze else g
        dx = np.broadcast_to(gb[:, :, None, None] / (h * w), xb.shape).copy()
        return (dx[0] if squeeze else dx,)

    return _emit("global_avg_pool", out[0] if squeeze else out, (x,), vjp)


def channel_pool(x: Tensor, mode: str) -> Tensor:
    """Mean or max across channels: ``C x H x W -> 1 x H x W``.

    Max-pool gradients go to the first (lowest-index) maximal channel.
    """
    xb, squeeze = _batched(x, 3, "channel_pool")
    c = xb.shape[1]
    if mode == "avg":
        out = xb.mean(axis=1, keepdims=True)

        def vjp(g):
            gb = g[None] if squeeze else g
            dx = np.broadcast_to(gb / c, xb.shape).copy()
            return (dx[0] if squeeze else dx,)

    elif mode == "max":
        idx = xb.argmax(axis=1)[:, None]
        out = np.take_along_axis(xb, idx, axis=1)

        def vjp(g):
            gb = g[None] if squeeze else g
            dx = np.zeros_like(xb, dtype=gb.dtype)
            np.put_along_axis(dx, idx, gb, axis=1)
            return (dx[0] if squeeze else dx,)

    else:
        raise ValueError(f"channel_pool: mode must be 'avg' or 'max', got {mode!r}")
    return _emit(f"channel_pool_{mode}", out[0] if squeeze else out, (x,), vjp)


# --------------------------------------------------------------------------- activations


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    # np.maximum keeps NaN visible so divergence is not masked
    out = np.maximum(x.data, 0).astype(x.dtype)
    return _emit("relu", out, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _emit("sigmoid", out, (x,), lambda g: (g * out * (1 - out),))


def hard_sigmoid(x: Tensor) -> Tensor:
    """``min(max(x + 3, 0), 6) / 6``."""
    d = x.data
    out = (np.minimum(np.maximum(d + 3, 0), 6) / 6).astype(x.dtype)
    slope = ((d > -3) & (d < 3)).astype(x.dtype) / 6
    return _emit("hard_sigmoid", out, (x,), lambda g: (g * slope,))


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "hard_sigmoid": hard_sigmoid}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


# --------------------------------------------------------------------------- elementwise / structural


def scale_broadcast(x: Tensor, s: Tensor) -> Tensor:
    """Multiply feature maps by per-channel (``C``) or per-location (``1 x H x W``) factors."""
    xb, squeeze = _batched(x, 3, "scale_broadcast")
    n, c, h, w = xb.shape
    sd = s.data if not squeeze else s.data[None]
    if sd.shape == (n, c):
        sb = sd[:, :, None, None]
        reduce_axes = (2, 3)
    elif sd.shape == (n, 1, h, w):
        sb = sd
        reduce_axes = (1,)
    else:
        raise ShapeError(f"scale_broadcast: scale shape {s.shape} fits neither channel nor spatial form of {x.shape}")
    out = xb * sb

    def vjp(g):
        gb = g[None] if squeeze else g
        dx = gb * sb
        ds = (gb * xb).sum(axis=reduce_axes, keepdims=reduce_axes == (1,))
        if squeeze:
            dx, ds = dx[0], ds[0]
        return dx, ds

    return _emit("scale_broadcast", out[0] if squeeze else out, (x, s), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def shift(x: Tensor, c: float) -> Tensor:
    """``x + c`` for a constant scalar ``c``."""
    return _emit("shift", x.data + x.dtype.type(c), (x,), lambda g: (g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def concat(tensors: Sequence[Tensor], axis: int = -3) -> Tensor:
    """Join along an axis (default: the channel axis of ``... x C x H x W``)."""
    arrays = [t.data for t in tensors]
    out = np.concatenate(arrays, axis=axis)
    bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit("concat", out, tuple(tensors), vjp)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as err:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from err
    return _emit("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return _emit("sum", out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean_squared_error(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over every element (batch included) of the squared difference."""
    if pred.shape != target.shape:
        raise ShapeError(f"mean_squared_error: shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray((diff * diff).sum() / n, dtype=pred.dtype)

    def vjp(g):
        d = (2.0 / n) * g * diff
        return d.astype(pred.dtype), (-d).astype(target.dtype)

    return _emit("mse", out, (pred, target), vjp)
