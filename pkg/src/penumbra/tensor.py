"""Minimal dense tensors with tape-based reverse-mode differentiation.

Only the operations needed by the denoising autoencoder are provided. Arrays
are float32; reductions accumulate in float64.

Gradients are recorded only while a :class:`Tape` is active::

    with Tape() as tape:
        loss = smooth_l1(conv2d(x, w, b, stride=2, pad=2), target)
    tape.backward(loss)
    w.grad  # populated
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

_PRECISION = [np.float32]


def _dt():
    return _PRECISION[-1]


@contextmanager
def precision(dtype):
    """Temporarily switch the working float type (used by gradient checks)."""
    _PRECISION.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _PRECISION.pop()


# Upper bound on the im2col buffer built per chunk of the batch.
_IM2COL_BYTES = 48 * 1024 * 1024


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces or receives NaN/inf values."""


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{where}: non-finite values encountered")


class Tensor:
    """n-D float array (float32 unless :func:`precision` says otherwise)."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=_dt())
        self.data = arr if arr.flags.c_contiguous else arr.copy()
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node_id: Optional[int] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Op:
    name: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Entering the tape as a context manager makes it the recording target for
    every op whose inputs require gradients.
    """

    ops: list = field(default_factory=list)

    def record(self, name, inputs, output, backward) -> None:
        output.node_id = len(self.ops)
        self.ops.append(_Op(name, tuple(inputs), output, backward))

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def backward(self, loss: Tensor) -> dict:
        """Propagate d(loss)/d(.) to every leaf that requires gradients.

        Leaf ``.grad`` buffers are accumulated into (not overwritten). Returns
        a mapping ``id(leaf) -> gradient`` for convenience.
        """
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.node_id is None or loss.node_id >= len(self.ops) or self.ops[loss.node_id].output is not loss:
            raise ValueError("loss was not produced on this tape")
        grads = {id(loss): np.ones(loss.shape, dtype=_dt())}
        leaves = {}
        for op in reversed(self.ops[: loss.node_id + 1]):
            g = grads.pop(id(op.output), None)
            if g is None:
                continue
            in_grads = op.backward(g)
            for inp, gi in zip(op.inputs, in_grads):
                if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                gi = np.asarray(gi, dtype=_dt())
                if gi.shape != inp.shape:
                    raise RuntimeError(f"{op.name}: gradient shape {gi.shape} != input shape {inp.shape}")
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if inp.node_id is None:
                    leaves[key] = inp
        out = {}
        for key, leaf in leaves.items():
            g = grads[key]
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
            out[key] = leaf.grad
        return out


_TAPES: list = []


def backward(tape: Tape, loss: Tensor) -> dict:
    return tape.backward(loss)


def apply_op(name: str, out_data: np.ndarray, inputs: Sequence, backward_fn) -> Tensor:
    """Wrap ``out_data`` in a Tensor and record it on the active tape.

    ``backward_fn`` maps the output gradient to one gradient (or ``None``)
    per entry of ``inputs``. Other modules use this to define custom ops.
    """
    out_data = np.asarray(out_data, dtype=_dt())
    _check_finite(out_data, name)
    out = Tensor(out_data)
    if _TAPES and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPES[-1].record(name, inputs, out, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return apply_op(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return apply_op(
        "sub", a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return apply_op(
        "mul", a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def tsum(x: Tensor) -> Tensor:
    total = np.asarray(x.data.sum(dtype=np.float64))
    return apply_op("sum", total, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def tmean(x: Tensor) -> Tensor:
    n = x.size
    total = np.asarray(x.data.mean(dtype=np.float64))
    return apply_op("mean", total, (x,), lambda g: (np.full(x.shape, g / n, dtype=_dt()),))


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return apply_op("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in (0, 1), got {slope}")
    _check_finite(x.data, "leaky_relu input")
    pos = x.data > 0
    out = np.where(pos, x.data, x.data * _dt()(slope))
    return apply_op("leaky_relu", out, (x,), lambda g: (np.where(pos, g, g * _dt()(slope)),))


def sigmoid(x: Tensor) -> Tensor:
    z = x.data.astype(np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    out = out.astype(_dt())
    return apply_op("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def dropout(x: Tensor, p: float = 0.2, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout. Returns ``x`` itself when not training or ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    keep = (rng.random(x.shape) >= p).astype(_dt()) * _dt()(1.0 / (1.0 - p))
    return apply_op("dropout", x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------- convolution


def _conv_out(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # channels-last (B, Hp, Wp, C) -> (B*ho*wo, kh*kw*C); rows of kw*C are contiguous
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    b, c = xp.shape[0], xp.shape[3]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(b * ho * wo, kh * kw * c)


def _batch_chunks(batch: int, per_item_bytes: int):
    step = max(1, _IM2COL_BYTES // max(per_item_bytes, 1))
    for start in range(0, batch, step):
        yield slice(start, min(batch, start + step))


def _conv_input_grad(g_nhwc: np.ndarray, weight: np.ndarray, stride: int, pad: int, h: int, w: int) -> np.ndarray:
    """Input gradient as a stride-1 correlation of the dilated output gradient
    with the flipped, channel-swapped kernel. Returns NCHW."""
    b, ho, wo, cout = g_nhwc.shape
    _, cin, kh, kw = weight.shape
    lo_h, lo_w = kh - 1 - pad, kw - 1 - pad
    extra_h = (h + 2 * pad - kh) % stride
    extra_w = (w + 2 * pad - kw) % stride
    if lo_h < 0 or lo_w < 0:
        return _conv_input_grad_scatter(g_nhwc, weight, stride, pad, h, w)
    hd, wd = (ho - 1) * stride + 1, (wo - 1) * stride + 1
    gp = np.zeros((b, hd + 2 * lo_h + extra_h, wd + 2 * lo_w + extra_w, cout), dtype=_dt())
    gp[:, lo_h : lo_h + hd : stride, lo_w : lo_w + wd : stride] = g_nhwc
    # flipped kernel viewed as (cin, kh, kw, cout)
    wmat = weight[:, :, ::-1, ::-1].transpose(1, 2, 3, 0).reshape(cin, -1)
    out = np.empty((b, h, w, cin), dtype=_dt())
    for sl in _batch_chunks(b, kh * kw * cout * h * w * 4):
        out[sl] = (_im2col(gp[sl], kh, kw, 1, h, w) @ wmat.T).reshape(-1, h, w, cin)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv_input_grad_scatter(g_nhwc, weight, stride, pad, h, w):
    # col2im fallback for pad > kernel - 1
    b, ho, wo, cout = g_nhwc.shape
    _, cin, kh, kw = weight.shape
    wmat = weight.transpose(0, 2, 3, 1).reshape(cout, -1)
    gxp = np.zeros((b, h + 2 * pad, w + 2 * pad, cin), dtype=_dt())
    gcols = (np.ascontiguousarray(g_nhwc).reshape(-1, cout) @ wmat).reshape(b, ho, wo, kh, kw, cin)
    for i in range(kh):
        for j in range(kw):
            gxp[:, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride] += gcols[:, :, :, i, j]
    return np.ascontiguousarray(gxp[:, pad : pad + h, pad : pad + w].transpose(0, 3, 1, 2))


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding, NCHW layout."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    b, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ValueError(f"conv2d: input has {cin} channels but weight expects {wcin}")
    if stride < 1:
        raise ValueError("conv2d: stride must be >= 1")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    _check_finite(x.data, "conv2d input")

    ho, wo = _conv_out(h, kh, stride, pad), _conv_out(w, kw, stride, pad)
    # work channels-last internally
    xp = np.zeros((b, h + 2 * pad, w + 2 * pad, cin), dtype=_dt())
    xp[:, pad : pad + h, pad : pad + w] = x.data.transpose(0, 2, 3, 1)
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(cout, -1)
    k = cin * kh * kw
    out = np.empty((b, ho, wo, cout), dtype=_dt())
    for sl in _batch_chunks(b, k * ho * wo * 4):
        cols = _im2col(xp[sl], kh, kw, stride, ho, wo)
        out[sl] = (cols @ wmat.T).reshape(-1, ho, wo, cout)
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def _backward(g):
        gw = np.zeros((cout, k), dtype=_dt())
        g_nhwc = g.transpose(0, 2, 3, 1)
        for sl in _batch_chunks(b, k * ho * wo * 4):
            gmat = np.ascontiguousarray(g_nhwc[sl]).reshape(-1, cout)
            gw += gmat.T @ _im2col(xp[sl], kh, kw, stride, ho, wo)
        gx = None
        if x.requires_grad:
            gx = _conv_input_grad(g_nhwc, weight.data, stride, pad, h, w)
        gb = g.sum(axis=(0, 2, 3), dtype=np.float64) if bias is not None else None
        return gx, gw.reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2), gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return apply_op("conv2d", out, inputs, _backward)


# ---------------------------------------------------------------- resampling


def pool2x2(x: Tensor, mode: str = "max") -> Tensor:
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"pool2x2 needs even spatial extents, got {h}x{w}")
    blocks = x.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    if mode == "avg":
        out = blocks.mean(axis=-1, dtype=np.float64)

        def _backward(g):
            return (np.repeat(np.repeat(g * 0.25, 2, axis=2), 2, axis=3),)

    elif mode == "max":
        idx = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

        def _backward(g):
            gb = np.zeros(blocks.shape, dtype=_dt())
            np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
            gb = gb.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
            return (gb.reshape(b, c, h, w),)

    else:
        raise ValueError(f"unknown pooling mode {mode!r}")
    return apply_op(f"pool2x2_{mode}", out, (x,), _backward)


def _cubic_weight(t: float, a: float = -0.5) -> float:
    t = abs(t)
    if t <= 1:
        return (a + 2) * t**3 - (a + 3) * t**2 + 1
    if t < 2:
        return a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a
    return 0.0


# Half-pixel-centred x2 upsampling: even outputs sit 0.25 px left of a source
# sample, odd outputs 0.25 px right. Taps apply to the edge-padded (by 2) axis.
_EVEN_TAPS = [_cubic_weight(d) for d in (1.75, 0.75, 0.25, 1.25)]
_ODD_TAPS = [_cubic_weight(d) for d in (1.25, 0.25, 0.75, 1.75)]


def _axis_slice(ndim: int, axis: int, sl: slice) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = sl
    return tuple(idx)


def _upsample_axis(x: np.ndarray, axis: int) -> np.ndarray:
    ax = axis % x.ndim
    n = x.shape[ax]
    first = x[_axis_slice(x.ndim, ax, slice(0, 1))]
    last = x[_axis_slice(x.ndim, ax, slice(n - 1, n))]
    xp = np.concatenate([first, first, x, last, last], axis=ax)
    tap = lambda t, m: xp[_axis_slice(x.ndim, ax, slice(t, t + m))]
    shape = list(x.shape)
    shape[ax] = n
    out = np.empty(x.shape[: ax + 1] + (2,) + x.shape[ax + 1 :], dtype=_dt())
    even = out[_axis_slice(out.ndim, ax + 1, 0)]
    odd = out[_axis_slice(out.ndim, ax + 1, 1)]
    even[...] = _EVEN_TAPS[0] * tap(0, n)
    odd[...] = _ODD_TAPS[0] * tap(1, n)
    for t in range(1, 4):
        even += _EVEN_TAPS[t] * tap(t, n)
        odd += _ODD_TAPS[t] * tap(t + 1, n)
    shape[ax] = 2 * n
    return out.reshape(shape)


def _upsample_axis_T(g: np.ndarray, axis: int) -> np.ndarray:
    ax = axis % g.ndim
    n = g.shape[ax] // 2
    g2 = g.reshape(g.shape[:ax] + (n, 2) + g.shape[ax + 1 :])
    ge = g2[_axis_slice(g2.ndim, ax + 1, 0)]
    go = g2[_axis_slice(g2.ndim, ax + 1, 1)]
    pshape = list(ge.shape)
    pshape[ax] = n + 4
    gp = np.zeros(pshape, dtype=_dt())
    for t in range(4):
        gp[_axis_slice(gp.ndim, ax, slice(t, t + n))] += _EVEN_TAPS[t] * ge
        gp[_axis_slice(gp.ndim, ax, slice(t + 1, t + 1 + n))] += _ODD_TAPS[t] * go
    gx = gp[_axis_slice(gp.ndim, ax, slice(2, n + 2))].copy()
    gx[_axis_slice(gx.ndim, ax, 0)] += gp[_axis_slice(gp.ndim, ax, 0)] + gp[_axis_slice(gp.ndim, ax, 1)]
    gx[_axis_slice(gx.ndim, ax, -1)] += gp[_axis_slice(gp.ndim, ax, n + 2)] + gp[_axis_slice(gp.ndim, ax, n + 3)]
    return gx


def upsample_bicubic(x: Tensor, factor: int = 2) -> Tensor:
    """x2 bicubic (Catmull-Rom, a=-0.5) upsampling with edge clamping."""
    if factor != 2:
        raise ValueError("only factor 2 is supported")
    if x.shape[-1] < 2 or x.shape[-2] < 2:
        raise ValueError(f"upsample_bicubic needs extents >= 2, got {x.shape[-2:]}")
    out = _upsample_axis(_upsample_axis(x.data, -1), -2)
    return apply_op(
        "upsample_bicubic", out, (x,),
        lambda g: (_upsample_axis_T(_upsample_axis_T(g, -2), -1),),
    )


# ---------------------------------------------------------------- dense layers


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: incompatible shapes {x.shape} and {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def _backward(g):
        return g @ weight.data, g.T @ x.data, (g.sum(axis=0) if bias is not None else None)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return apply_op("linear", out, inputs, _backward)


def global_avg_pool(x: Tensor) -> Tensor:
    b, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True, dtype=np.float64)
    return apply_op(
        "global_avg_pool", out, (x,),
        lambda g: (np.broadcast_to(g / (h * w), x.shape).astype(_dt()),),
    )


class BatchNormState:
    """Running statistics for one batchnorm layer."""

    def __init__(self, channels: int, momentum: float = 0.1):
        self.running_mean = np.zeros(channels, dtype=_dt())
        self.running_var = np.ones(channels, dtype=_dt())
        self.momentum = momentum


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: Optional[BatchNormState] = None,
    training: bool = True,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalisation over (batch, H, W)."""
    if eps <= 0:
        raise ValueError("batchnorm eps must be positive")
    c = x.shape[1]
    n = x.size // c
    xd = x.data.astype(np.float64)
    if training:
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        if state is not None:
            m = state.momentum
            unbiased = var * n / max(n - 1, 1)
            state.running_mean[:] = (1 - m) * state.running_mean + m * mean
            state.running_var[:] = (1 - m) * state.running_var + m * unbiased
    else:
        if state is None:
            raise ValueError("batchnorm inference needs running statistics")
        mean = state.running_mean.astype(np.float64)
        var = state.running_var.astype(np.float64)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean[None, :, None, None]) * inv[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def _backward(g):
        g64 = g.astype(np.float64)
        gbeta = g64.sum(axis=(0, 2, 3))
        ggamma = (g64 * xhat).sum(axis=(0, 2, 3))
        gxhat = g64 * gamma.data[None, :, None, None]
        if training:
            gx = (inv[None, :, None, None] / n) * (
                n * gxhat
                - gxhat.sum(axis=(0, 2, 3))[None, :, None, None]
                - xhat * (gxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
            )
        else:
            gx = gxhat * inv[None, :, None, None]
        return gx, ggamma, gbeta

    return apply_op("batchnorm2d", out, (x, gamma, beta), _backward)


# ---------------------------------------------------------------- loss


def smooth_l1(pred: Tensor, target, beta: float = 1.0) -> Tensor:
    """Mean Huber loss: 0.5*d^2/beta for |d| < beta, |d| - 0.5*beta otherwise."""
    if beta <= 0:
        raise ValueError("smooth_l1 beta must be positive")
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"smooth_l1: shape mismatch {pred.shape} vs {target.shape}")
    d = pred.data.astype(np.float64) - target.data.astype(np.float64)
    ad = np.abs(d)
    small = ad < beta
    loss = np.where(small, 0.5 * d * d / beta, ad - 0.5 * beta).mean()
    n = d.size

    def _backward(g):
        gd = (np.clip(d / beta, -1.0, 1.0) * (float(g) / n)).astype(_dt())
        return gd, -gd

    return apply_op("smooth_l1", np.asarray(loss), (pred, target), _backward)


# ---------------------------------------------------------------- optimiser


def adam_step(params, grads, state: dict, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """One in-place Adam update with bias correction.

    ``state`` maps ``id(param)`` to ``(m, v, t)`` and is filled lazily.
    """
    b1, b2 = betas
    for p, g in zip(params, grads):
        if g is None:
            continue
        m, v, t = state.get(id(p), (np.zeros_like(p.data), np.zeros_like(p.data), 0))
        t += 1
        m = (b1 * m + (1 - b1) * g).astype(_dt())
        v = (b2 * v + (1 - b2) * g * g).astype(_dt())
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p.data = (p.data - lr * mhat / (np.sqrt(vhat) + eps)).astype(_dt())
        state[id(p)] = (m, v, t)


class Adam:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state: dict = {}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr, self.betas, self.eps)
