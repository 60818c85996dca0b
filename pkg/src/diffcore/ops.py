# src/diffcore/ops.py
"""
Forward operations with their vector-Jacobian products.

Every op takes Nodes (plain numbers/arrays are lifted to constants of the
operand's graph), computes the value with numpy, and records a closure that
maps the upstream gradient to one gradient per input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from src.diffcore.graph import Graph, Node, as_array
from src.errors import DimensionError, ParameterError, ReceptiveFieldError

ACTIVATIONS = ("mish", "sigmoid", "tanh", "relu")

# softplus(x) == x above this point in float64
SOFTPLUS_LINEAR_AT = 30.0


def _graph_of(*operands) -> Graph:
    for x in operands:
        if isinstance(x, Node):
            return x.graph
    raise ValueError("at least one operand must be a Node")


def _lift(*operands) -> Tuple[Graph, Tuple[Node, ...]]:
    g = _graph_of(*operands)
    return g, tuple(g.lift(x) for x in operands)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: np.ndarray, b: np.ndarray) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(op, a.shape, b.shape) from None


# ---------- elementwise arithmetic ----------

def add(a, b) -> Node:
    g, (a, b) = _lift(a, b)
    _broadcast_shape("add", a.value, b.value)
    out = a.value + b.value

    def vjp(grad):
        return unbroadcast(grad, a.shape), unbroadcast(grad, b.shape)

    return g.record("add", (a, b), out, vjp)


def sub(a, b) -> Node:
    g, (a, b) = _lift(a, b)
    _broadcast_shape("sub", a.value, b.value)
    out = a.value - b.value

    def vjp(grad):
        return unbroadcast(grad, a.shape), unbroadcast(-grad, b.shape)

    return g.record("sub", (a, b), out, vjp)


def mul(a, b) -> Node:
    g, (a, b) = _lift(a, b)
    _broadcast_shape("mul", a.value, b.value)
    av, bv = a.value, b.value
    out = av * bv

    def vjp(grad):
        return unbroadcast(grad * bv, a.shape), unbroadcast(grad * av, b.shape)

    return g.record("mul", (a, b), out, vjp)


def div(a, b) -> Node:
    g, (a, b) = _lift(a, b)
    _broadcast_shape("div", a.value, b.value)
    av, bv = a.value, b.value
    out = av / bv

    def vjp(grad):
        return unbroadcast(grad / bv, a.shape), unbroadcast(-grad * av / (bv * bv), b.shape)

    return g.record("div", (a, b), out, vjp)


def absolute(x: Node) -> Node:
    xv = x.value
    out = np.abs(xv)

    def vjp(grad):
        return (grad * np.sign(xv),)

    return x.graph.record("abs", (x,), out, vjp)


# ---------- reductions and reshaping ----------

def _norm_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Node, axis=None, keepdims: bool = False) -> Node:  # noqa: A001 - mirrors numpy
    axes = _norm_axes(axis, x.ndim)
    out = x.value.sum(axis=axes, keepdims=keepdims)
    shape = x.shape

    def vjp(grad):
        if not keepdims:
            grad = np.expand_dims(grad, axes)
        return (np.broadcast_to(grad, shape).copy(),)

    return x.graph.record("sum", (x,), out, vjp)


def mean(x: Node, axis=None, keepdims: bool = False) -> Node:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.value.mean(axis=axes, keepdims=keepdims)
    shape = x.shape

    def vjp(grad):
        if not keepdims:
            grad = np.expand_dims(grad, axes)
        return (np.broadcast_to(grad / count, shape).copy(),)

    return x.graph.record("mean", (x,), out, vjp)


def reshape(x: Node, shape: Sequence[int]) -> Node:
    try:
        out = x.value.reshape(tuple(shape))
    except ValueError:
        raise DimensionError("reshape", x.shape, tuple(shape)) from None
    in_shape = x.shape

    def vjp(grad):
        return (grad.reshape(in_shape),)

    return x.graph.record("reshape", (x,), out, vjp)


def transpose(x: Node, axes: Sequence[int]) -> Node:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError("transpose", x.shape, detail=f"bad permutation {axes}")
    out = np.transpose(x.value, axes)
    inverse = tuple(np.argsort(axes))

    def vjp(grad):
        return (np.transpose(grad, inverse),)

    return x.graph.record("transpose", (x,), out, vjp)


def concat(nodes: Sequence[Node], axis: int) -> Node:
    g = _graph_of(*nodes)
    nodes = tuple(g.lift(n) for n in nodes)
    try:
        out = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError:
        raise DimensionError("concat", *(n.shape for n in nodes)) from None
    sizes = [n.shape[axis] for n in nodes]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(grad):
        return tuple(np.split(grad, cuts, axis=axis))

    return g.record("concat", nodes, out, vjp)


def slice_axis(x: Node, axis: int, start: int, stop: Optional[int] = None) -> Node:
    """x[..., start:stop, ...] along one axis."""
    axis %= x.ndim
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = x.value[index]
    shape = x.shape

    def vjp(grad):
        full = np.zeros(shape)
        full[index] = grad
        return (full,)

    return x.graph.record("slice", (x,), out, vjp)


def take(x: Node, axis: int, index: int) -> Node:
    """Select one position along `axis`, dropping that axis."""
    axis %= x.ndim
    sel = [slice(None)] * x.ndim
    sel[axis] = index
    sel = tuple(sel)
    out = x.value[sel]
    shape = x.shape

    def vjp(grad):
        full = np.zeros(shape)
        full[sel] = grad
        return (full,)

    return x.graph.record("take", (x,), out, vjp)


def pad_left(x: Node, width: int) -> Node:
    """Zero-pad the last axis on the left."""
    if width <= 0:
        return x
    pad = [(0, 0)] * (x.ndim - 1) + [(width, 0)]
    out = np.pad(x.value, pad)

    def vjp(grad):
        return (grad[..., width:],)

    return x.graph.record("pad_left", (x,), out, vjp)


# ---------- products ----------

def matmul_batched(a, b) -> Node:
    """
    Batched matrix product a[..., m, p] @ b[..., p, n].

    Leading batch extents must be equal or broadcastable from 1.
    """
    g, (a, b) = _lift(a, b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise DimensionError("matmul_batched", av.shape, bv.shape)
    try:
        np.broadcast_shapes(av.shape[:-2], bv.shape[:-2])
    except ValueError:
        raise DimensionError("matmul_batched", av.shape, bv.shape, detail="batch extents") from None
    out = np.matmul(av, bv)

    def vjp(grad):
        da = np.matmul(grad, np.swapaxes(bv, -1, -2))
        db = np.matmul(np.swapaxes(av, -1, -2), grad)
        return unbroadcast(da, av.shape), unbroadcast(db, bv.shape)

    return g.record("matmul", (a, b), out, vjp)


def linear_channels(x: Node, w, b=None) -> Node:
    """
    Channelwise affine map on axis 1: out[:, o, ...] = sum_c w[o, c] x[:, c, ...] + b[o].

    This is a 1x1 convolution over [B, C, N, L] (or [B, C, N]).
    """
    g, lifted = _lift(x, w) if b is None else _lift(x, w, b)
    x, w = lifted[0], lifted[1]
    xv, wv = x.value, w.value
    if wv.ndim != 2 or xv.ndim < 2 or xv.shape[1] != wv.shape[1]:
        raise DimensionError("linear_channels", xv.shape, wv.shape)
    spec = "oc,bc...->bo..."
    out = np.einsum(spec, wv, xv)
    inputs = [x, w]
    if b is not None:
        bias = lifted[2]
        if bias.shape != (wv.shape[0],):
            raise DimensionError("linear_channels bias", bias.shape, (wv.shape[0],))
        out = out + bias.value.reshape((1, -1) + (1,) * (xv.ndim - 2))
        inputs.append(bias)
    reduce_axes = (0,) + tuple(range(2, xv.ndim))

    def vjp(grad):
        dx = np.einsum("oc,bo...->bc...", wv, grad)
        dw = np.tensordot(grad, xv, axes=(reduce_axes, reduce_axes))
        if b is None:
            return dx, dw
        return dx, dw, grad.sum(axis=reduce_axes)

    return g.record("linear_channels", inputs, out, vjp)


def linear_last(x: Node, w, b=None) -> Node:
    """Affine map on the last axis: x[..., i] -> x @ w.T + b with w [out, in]."""
    g, lifted = _lift(x, w) if b is None else _lift(x, w, b)
    x, w = lifted[0], lifted[1]
    xv, wv = x.value, w.value
    if wv.ndim != 2 or xv.shape[-1] != wv.shape[1]:
        raise DimensionError("linear_last", xv.shape, wv.shape)
    out = xv @ wv.T
    inputs = [x, w]
    if b is not None:
        bias = lifted[2]
        if bias.shape != (wv.shape[0],):
            raise DimensionError("linear_last bias", bias.shape, (wv.shape[0],))
        out = out + bias.value
        inputs.append(bias)

    def vjp(grad):
        dx = grad @ wv
        dw = grad.reshape(-1, grad.shape[-1]).T @ xv.reshape(-1, xv.shape[-1])
        if b is None:
            return dx, dw
        return dx, dw, grad.reshape(-1, grad.shape[-1]).sum(axis=0)

    return g.record("linear_last", inputs, out, vjp)


def conv1d_dilated(x, w, dilation: int) -> Node:
    """
    Valid dilated convolution along the last axis, independent per sensor.

    x [B, C_in, N, L], w [C_out, C_in, 1, k] -> [B, C_out, N, L - dilation*(k-1)].
    Tap j reads x[..., t + j*dilation]; no padding.
    """
    g, (x, w) = _lift(x, w)
    xv, wv = x.value, w.value
    if xv.ndim != 4 or wv.ndim != 4 or wv.shape[1] != xv.shape[1] or wv.shape[2] != 1:
        raise DimensionError("conv1d_dilated", xv.shape, wv.shape)
    dilation = int(dilation)
    if dilation < 1:
        raise ParameterError(f"dilation must be a positive integer, got {dilation}")
    k = wv.shape[3]
    if k < 1:
        raise DimensionError("conv1d_dilated", wv.shape, detail="kernel width must be >= 1")
    required = dilation * (k - 1) + 1
    length = xv.shape[3]
    if length < required:
        raise ReceptiveFieldError(length, required)
    out_len = length - dilation * (k - 1)

    out = np.zeros((xv.shape[0], wv.shape[0], xv.shape[2], out_len))
    for j in range(k):
        s = j * dilation
        out += np.einsum("oc,bcnt->bont", wv[:, :, 0, j], xv[..., s:s + out_len])

    def vjp(grad):
        dx = np.zeros_like(xv)
        dw = np.zeros_like(wv)
        for j in range(k):
            s = j * dilation
            dx[..., s:s + out_len] += np.einsum("oc,bont->bcnt", wv[:, :, 0, j], grad)
            dw[:, :, 0, j] = np.einsum("bont,bcnt->oc", grad, xv[..., s:s + out_len])
        return dx, dw

    return g.record("conv1d_dilated", (x, w), out, vjp)


# ---------- softmax and activations ----------

def softmax_temperature(x: Node, tau: float, axis: int = -1) -> Node:
    """exp(x/tau - max) / sum along `axis`; each slice sums to 1."""
    if not tau > 0:
        raise ParameterError(f"softmax temperature must be positive, got {tau}")
    if not (-x.ndim <= axis < x.ndim):
        raise ParameterError(f"axis {axis} invalid for rank {x.ndim}")
    z = x.value / tau
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(grad):
        inner = (grad * s).sum(axis=axis, keepdims=True)
        return (s * (grad - inner) / tau,)

    return x.graph.record("softmax", (x,), s, vjp)


def softplus(v: np.ndarray) -> np.ndarray:
    """ln(1 + e^x) with the linear branch above 30 to avoid overflow."""
    safe = np.minimum(v, SOFTPLUS_LINEAR_AT)
    return np.where(v > SOFTPLUS_LINEAR_AT, v, np.log1p(np.exp(safe)))


def activation(x: Node, kind: str) -> Node:
    """Elementwise mish | sigmoid | tanh | relu with exact derivatives."""
    xv = x.value
    if kind == "mish":
        t = np.tanh(softplus(xv))
        out = xv * t
        deriv = t + xv * (1.0 - t * t) * expit(xv)
    elif kind == "sigmoid":
        out = expit(xv)
        deriv = out * (1.0 - out)
    elif kind == "tanh":
        out = np.tanh(xv)
        deriv = 1.0 - out * out
    elif kind == "relu":
        out = np.maximum(xv, 0.0)
        deriv = (xv > 0).astype(np.float64)
    else:
        raise ParameterError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")

    def vjp(grad):
        return (grad * deriv,)

    return x.graph.record(kind, (x,), out, vjp)


def mish(x: Node) -> Node:
    return activation(x, "mish")


def sigmoid(x: Node) -> Node:
    return activation(x, "sigmoid")


def tanh(x: Node) -> Node:
    return activation(x, "tanh")


def relu(x: Node) -> Node:
    return activation(x, "relu")


# ---------- batch normalization ----------

@dataclass
class BatchNormState:
    """Running statistics per channel; mean 0 / var 1 until the first train step."""
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def fresh(cls, channels: int, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormState":
        return cls(np.zeros(channels), np.ones(channels), momentum, eps)

    def copy(self) -> "BatchNormState":
        return BatchNormState(self.running_mean.copy(), self.running_var.copy(), self.momentum, self.eps)


def batch_norm(x: Node, gamma, beta, state: BatchNormState, mode: str = "train",
               eps: Optional[float] = None) -> Node:
    """
    Per-channel normalization of x [B, C, N, L] over (B, N, L).

    train: batch statistics (biased variance) and an in-place running update
           running <- (1 - momentum) * running + momentum * batch
           (running variance uses the unbiased batch estimate)
    eval:  running statistics
    """
    g, (x, gamma, beta) = _lift(x, gamma, beta)
    eps = state.eps if eps is None else eps
    if not eps > 0:
        raise ParameterError(f"batch_norm eps must be positive, got {eps}")
    xv = x.value
    if xv.ndim != 4:
        raise DimensionError("batch_norm", xv.shape, detail="expected [B, C, N, L]")
    channels = xv.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError("batch_norm", xv.shape, gamma.shape, beta.shape)
    axes = (0, 2, 3)
    bshape = (1, channels, 1, 1)
    gv = gamma.value.reshape(bshape)
    bv = beta.value.reshape(bshape)

    if mode == "train":
        mu = xv.mean(axis=axes, keepdims=True)
        var = xv.var(axis=axes, keepdims=True)
        count = xv.size // channels
        m = state.momentum
        unbiased = var.reshape(-1) * (count / (count - 1)) if count > 1 else var.reshape(-1)
        state.running_mean = (1.0 - m) * state.running_mean + m * mu.reshape(-1)
        state.running_var = (1.0 - m) * state.running_var + m * unbiased
    elif mode == "eval":
        mu = state.running_mean.reshape(bshape)
        var = state.running_var.reshape(bshape)
        count = None
    else:
        raise ParameterError(f"batch_norm mode must be train|eval, got {mode!r}")

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mu) * inv_std
    out = gv * xhat + bv

    def vjp(grad):
        dgamma = (grad * xhat).sum(axis=axes)
        dbeta = grad.sum(axis=axes)
        dxhat = grad * gv
        if count is None:
            dx = dxhat * inv_std
        else:
            dx = (inv_std / count) * (
                count * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
        return dx, dgamma, dbeta

    return g.record(f"batch_norm[{mode}]", (x, gamma, beta), out, vjp)


# ---------- losses ----------

def mean_abs_error(h, y) -> Node:
    """mean |h - y| as a scalar node."""
    return mean(absolute(sub(h, y)))
