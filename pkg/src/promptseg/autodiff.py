"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is distributed across ``Tensor`` nodes: each op result keeps
references to its parents plus a closure computing parent gradients from
its own. Nodes carry a monotonically increasing creation id, so the
backward pass visits them in exactly the reverse of forward execution
order. Tensors are immutable after creation except for ``grad``
accumulation on leaves; a graph belongs to a single thread, while
read-only evaluation of independent graphs is thread-safe.

Broadcasting discipline: the arithmetic operators (`+`, `*`, ...) and
their named forms require equal shapes or a size-1 operand — silent
numpy-style broadcasting of mismatched token/feature shapes is a hard
ShapeError. The explicit ``b*`` variants (``badd`` etc.) opt in to full
broadcasting with gradient reduction over the expanded axes.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, NumericsError, ShapeError

_uid = itertools.count()

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_uid")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward = _backward
        self._uid = next(_uid)

    # -- inspection ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # -- operator sugar (strict shapes) ----------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __getitem__(self, key):
        return take(self, key)

    # -- method sugar -----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def backward(self):
        backward(self)


def _wrap(v) -> Tensor:
    return v if isinstance(v, Tensor) else Tensor(v)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Record one primitive application.

    ``backward_fn(g)`` must return one gradient array (or None) per
    parent; it is only attached when some parent tracks gradients.
    """
    rg = any(p.requires_grad for p in parents)
    if not rg:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn)


def apply_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Public hook for modules defining their own differentiable primitives."""
    return _make(data, parents, backward_fn)


# -- backward engine -------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable requires-grad leaf.

    Repeated calls without clearing grads accumulate, matching the
    documented contract. Intermediate node gradients live only in a
    local map so re-running backward never double-counts.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return

    # Reachable requires-grad subgraph, newest first == reverse execution order.
    seen = {id(loss): loss}
    stack = [loss]
    while stack:
        node = stack.pop()
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                seen[id(p)] = p
                stack.append(p)
    order = sorted(seen.values(), key=lambda t: t._uid, reverse=True)

    gmap = {id(loss): np.ones_like(loss.data)}
    for node in order:
        g = gmap.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # Leaf: fold into persistent grad.
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad = node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = gmap.get(id(parent))
            gmap[id(parent)] = pg if acc is None else acc + pg
    # Anything left in gmap belongs to nodes pruned from `order` (can't
    # happen: every parent of a visited node was collected).


# -- shape helpers ----------------------------------------------------------


def _strict_pair(a: Tensor, b: Tensor, op: str):
    if a.data.shape == b.data.shape:
        return
    if a.data.size == 1 or b.data.size == 1:
        return
    raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ (use b{op} for broadcasting)")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_finite(arr: np.ndarray, op: str):
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{op} produced non-finite values")


# -- elementwise arithmetic --------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _strict_pair(a, b, "add")
    out = a.data + b.data

    def bw(g):
        return (_unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g, b.data.shape) if b.requires_grad else None)

    return _make(out, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _strict_pair(a, b, "sub")
    out = a.data - b.data

    def bw(g):
        return (_unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.data.shape) if b.requires_grad else None)

    return _make(out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _strict_pair(a, b, "mul")
    out = a.data * b.data

    def bw(g):
        return (_unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None)

    return _make(out, (a, b), bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    _strict_pair(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    _check_finite(out, "div")

    def bw(g):
        ga = g / b.data if a.requires_grad else None
        gb = -g * a.data / (b.data * b.data) if b.requires_grad else None
        return (_unbroadcast(ga, a.data.shape) if ga is not None else None,
                _unbroadcast(gb, b.data.shape) if gb is not None else None)

    return _make(out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def badd(a: Tensor, b: Tensor) -> Tensor:
    """Broadcasting add (numpy rules); gradients reduce over expanded axes."""
    out = a.data + b.data

    def bw(g):
        return (_unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g, b.data.shape) if b.requires_grad else None)

    return _make(out, (a, b), bw)


def bsub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bw(g):
        return (_unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.data.shape) if b.requires_grad else None)

    return _make(out, (a, b), bw)


def bmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bw(g):
        return (_unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None)

    return _make(out, (a, b), bw)


def bdiv(a: Tensor, b: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    _check_finite(out, "bdiv")

    def bw(g):
        ga = _unbroadcast(g / b.data, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw)


# alias named in the op table
broadcast_add = badd


# -- nonlinearities -----------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def bw(g):
        return (g * (a.data > 0.0),)

    return _make(out, (a,), bw)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation GELU: 0.5 x (1 + tanh(√(2/π)(x + 0.044715 x³)))."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + _GELU_A * x2 * x))
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _make(out, (a,), bw)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_np(a.data)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bw(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), bw)


def cos(a: Tensor) -> Tensor:
    out = np.cos(a.data)

    def bw(g):
        return (-g * np.sin(a.data),)

    return _make(out, (a,), bw)


def exp(a: Tensor) -> Tensor:
    if np.any(a.data > 709.0):
        raise NumericsError("exp overflow")
    out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return _make(out, (a,), bw)


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    _check_finite(out, "log")

    def bw(g):
        return (g / a.data,)

    return _make(out, (a,), bw)


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x) in overflow-free form; derivative is sigmoid(x)."""
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def bw(g):
        return (g * _sigmoid_np(x),)

    return _make(out, (a,), bw)


def pow_const(a: Tensor, c: float) -> Tensor:
    with np.errstate(invalid="ignore", divide="ignore"):
        out = a.data ** c
    _check_finite(out, "pow")

    def bw(g):
        with np.errstate(invalid="ignore", divide="ignore"):
            d = c * a.data ** (c - 1.0)
        _check_finite(d, "pow backward")
        return (g * d,)

    return _make(out, (a,), bw)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp with subgradient 1 inside [lo, hi] (inclusive), 0 outside."""
    out = np.clip(a.data, lo, hi)

    def bw(g):
        inside = (a.data >= lo) & (a.data <= hi)
        return (g * inside,)

    return _make(out, (a,), bw)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; at ties the gradient routes to the first operand."""
    _strict_pair(a, b, "minimum")
    out = np.minimum(a.data, b.data)

    def bw(g):
        pick_a = a.data <= b.data
        return (_unbroadcast(g * pick_a, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g * ~pick_a, b.data.shape) if b.requires_grad else None)

    return _make(out, (a, b), bw)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; at ties the gradient routes to the first operand."""
    _strict_pair(a, b, "maximum")
    out = np.maximum(a.data, b.data)

    def bw(g):
        pick_a = a.data >= b.data
        return (_unbroadcast(g * pick_a, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g * ~pick_a, b.data.shape) if b.requires_grad else None)

    return _make(out, (a, b), bw)


# -- reductions ---------------------------------------------------------------


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.data.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axes)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _make(out, (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.data.ndim)
    n = int(np.prod([a.data.shape[i] for i in axes]))
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axes)
        return (np.broadcast_to(gg / n, a.data.shape).copy(),)

    return _make(out, (a,), bw)


def amax(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Max-reduction; ties share the gradient equally (a.e. unique anyway)."""
    axes = _axis_tuple(axis, a.data.ndim)
    out = a.data.max(axis=axes, keepdims=keepdims)

    def bw(g):
        full = a.data.max(axis=axes, keepdims=True)
        mask = (a.data == full).astype(np.float64)
        mask /= mask.sum(axis=axes, keepdims=True)
        gg = g if keepdims else np.expand_dims(g, axes)
        return (mask * gg,)

    return _make(out, (a,), bw)


def amin(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.data.ndim)
    out = a.data.min(axis=axes, keepdims=keepdims)

    def bw(g):
        full = a.data.min(axis=axes, keepdims=True)
        mask = (a.data == full).astype(np.float64)
        mask /= mask.sum(axis=axes, keepdims=True)
        gg = g if keepdims else np.expand_dims(g, axes)
        return (mask * gg,)

    return _make(out, (a,), bw)


def adaptive_avg_pool_1x1(a: Tensor) -> Tensor:
    """Global spatial mean over the trailing two axes: (..., C, H, W) -> (..., C)."""
    return tmean(a, axis=(-2, -1))


# -- structural ops -----------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def bw(g):
        return (g.reshape(a.data.shape),)

    return _make(out, (a,), bw)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = a.data.transpose(axes)

    def bw(g):
        return (g.transpose(inv),)

    return _make(out, (a,), bw)


def take(a: Tensor, key) -> Tensor:
    """Basic slicing/int indexing with scatter-back gradient."""
    out = a.data[key]

    def bw(g):
        ga = np.zeros_like(a.data)
        ga[key] += g
        return (ga,)

    return _make(out, (a,), bw)


def concat(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(ts)
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, ts, bw)


def box_downsample(a: Tensor, k: int) -> Tensor:
    """Non-overlapping k×k average pooling on (..., H, W); exact adjoint."""
    if k == 1:
        return a
    *lead, h, w = a.data.shape
    if h % k or w % k:
        raise ShapeError(f"box_downsample: {h}x{w} not divisible by {k}")
    view = a.data.reshape(*lead, h // k, k, w // k, k)
    out = view.mean(axis=(-3, -1))

    def bw(g):
        gg = np.repeat(np.repeat(g, k, axis=-1), k, axis=-2) / (k * k)
        return (gg,)

    return _make(out, (a,), bw)


def bilinear_upsample_2x(a: Tensor) -> Tensor:
    """Fixed 2x bilinear upsampling on (..., H, W), half-pixel-centered
    (align_corners = False) with edge clamping. Linear, so the adjoint is
    the transposed interpolation matrix."""
    *lead, h, w = a.data.shape
    wh = _upsample_matrix(h)
    ww = _upsample_matrix(w)
    out = np.tensordot(a.data, ww, axes=([a.data.ndim - 1], [1]))  # (..., H, 2W)
    out = np.tensordot(out.swapaxes(-1, -2), wh, axes=([a.data.ndim - 1], [1])).swapaxes(-1, -2)

    def bw(g):
        gg = np.tensordot(g, ww, axes=([g.ndim - 1], [0]))  # (..., 2H, W)
        gg = np.tensordot(gg.swapaxes(-1, -2), wh, axes=([g.ndim - 1], [0])).swapaxes(-1, -2)
        return (gg,)

    return _make(out, (a,), bw)


_upsample_cache: dict[int, np.ndarray] = {}


def _upsample_matrix(n: int) -> np.ndarray:
    m = _upsample_cache.get(n)
    if m is None:
        m = np.zeros((2 * n, n))
        for i in range(2 * n):
            src = (i + 0.5) / 2.0 - 0.5
            j0 = int(math.floor(src))
            frac = src - j0
            m[i, min(max(j0, 0), n - 1)] += 1.0 - frac
            m[i, min(max(j0 + 1, 0), n - 1)] += frac
        _upsample_cache[n] = m
    return m


# -- linear algebra -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 1 or b.data.ndim < 1:
        raise ShapeError("matmul needs at least 1-d operands")
    try:
        out = a.data @ b.data
    except ValueError as e:
        raise ShapeError(f"matmul: {a.data.shape} @ {b.data.shape}: {e}") from None

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2) if b.data.ndim >= 2 else np.multiply.outer(g, b.data)
            ga = _unbroadcast(ga, a.data.shape) if ga.shape != a.data.shape else ga
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g if a.data.ndim >= 2 else np.multiply.outer(a.data, g)
            gb = _unbroadcast(gb, b.data.shape) if gb.shape != b.data.shape else gb
        return ga, gb

    return _make(out, (a, b), bw)


def softmax(a: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    x = a.data
    s = np.exp(x - x.max(axis=-1, keepdims=True))
    s /= s.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _make(s, (a,), bw)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalization over the last axis with learnable scale/shift."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    n = x.shape[-1]

    def bw(g):
        ga = gg = gb = None
        lead = tuple(range(g.ndim - 1))
        if gamma.requires_grad:
            gg = (g * xhat).sum(axis=lead)
        if beta.requires_grad:
            gb = g.sum(axis=lead)
        if a.requires_grad:
            gy = g * gamma.data
            ga = inv * (gy - gy.mean(axis=-1, keepdims=True) - xhat * (gy * xhat).mean(axis=-1, keepdims=True))
        return ga, gg, gb

    return _make(out, (a, gamma, beta), bw)


# -- convolution --------------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation on (N, C, H, W) with (O, C, kh, kw) kernels.

    A 3-d image input (C, H, W) is accepted and returns (O, H', W').
    im2col + one dgemm forward; the input gradient scatters per kernel
    tap so strided convs (patch embedding) reuse the same path.
    """
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: input ndim {x.data.ndim}, kernel ndim {w.data.ndim}")
    n, c, h, wd_ = xd.shape
    o, cw, kh, kw = w.data.shape
    if c != cw:
        raise ShapeError(f"conv2d: {c} input channels vs kernel expecting {cw}")
    if h + 2 * padding < kh or wd_ + 2 * padding < kw:
        raise ShapeError("conv2d: kernel larger than padded input")
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd_ + 2 * padding - kw) // stride + 1

    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wm = w.data.reshape(o, c * kh * kw)
    y = cols @ wm.T
    if b is not None:
        y = y + b.data
    out = y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def bw(g):
        if squeeze:
            g = g[None] if g.ndim == 3 else g
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gx = gw = gb = None
        if w.requires_grad:
            gw = (g2.T @ cols).reshape(o, c, kh, kw)
        if b is not None and b.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            dcols = (g2 @ wm).reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride] += dcols[:, :, :, :, i, j]
            gx = gxp[:, :, padding:padding + h, padding:padding + wd_] if padding else gxp
            if squeeze:
                gx = gx[0]
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out[0] if squeeze else out, parents, bw)


def replicate_pad2d(x: Tensor, pad: int) -> Tensor:
    """Edge-replication padding on the two trailing axes; the adjoint
    folds replicated-border gradients back onto the edge pixels."""
    p = pad
    out = np.pad(x.data, [(0, 0)] * (x.data.ndim - 2) + [(p, p), (p, p)], mode="edge")

    def bw(g):
        g = g.copy()
        g[..., p, :] += g[..., :p, :].sum(axis=-2)
        g[..., -p - 1, :] += g[..., -p:, :].sum(axis=-2)
        core_r = g[..., p:-p, :]
        core_r[..., p] += core_r[..., :p].sum(axis=-1)
        core_r[..., -p - 1] += core_r[..., -p:].sum(axis=-1)
        return (core_r[..., p:-p].copy(),)

    return _make(out, (x,), bw)


# -- dispatch table (uniform entry point over the primitive set) -------------

_PRIMITIVES: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "matmul": matmul,
    "conv2d": conv2d,
    "relu": relu,
    "gelu": gelu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "cos": cos,
    "pow": pow_const,
    "exp": exp,
    "log": log,
    "clip": clip,
    "min": minimum,
    "max": maximum,
    "sum": tsum,
    "mean": tmean,
    "adaptive_avg_pool_1x1": adaptive_avg_pool_1x1,
    "bilinear_upsample_2x": bilinear_upsample_2x,
    "layer_norm": layer_norm,
    "softmax": softmax,
    "concat": concat,
    "broadcast_add": broadcast_add,
    "softplus": softplus,
    "reduce_min": amin,
    "reduce_max": amax,
}


def primitive_forward(op: str, *inputs, **attrs) -> Tensor:
    """Apply a named primitive; gradient tracking is recorded whenever an
    input requires it. Unknown names raise ContractError."""
    fn = _PRIMITIVES.get(op)
    if fn is None:
        raise ContractError(f"unknown primitive {op!r}")
    return fn(*inputs, **attrs)


def primitive_names() -> tuple:
    return tuple(_PRIMITIVES)


# -- finite-difference verification ------------------------------------------


@dataclass
class CheckReport:
    """Outcome of one analytic-vs-central-difference comparison."""
    max_rel_err: float
    passed: bool
    n_coords: int

    def __str__(self):
        return f"{'PASS' if self.passed else 'FAIL'} max_rel_err={self.max_rel_err:.3e} ({self.n_coords} coords)"


def finite_difference_check(f, x: Tensor, h: float = 1e-5, tol: float = 1e-4,
                            max_coords: Optional[int] = None, seed: int = 0) -> CheckReport:
    """Compare reverse-mode gradients of scalar-valued ``f`` against
    central differences at ``x``.

    The error per coordinate is |analytic − fd| / max(1, |fd|); the
    report carries the max. ``max_coords`` subsamples coordinates
    deterministically for large tensors (all coordinates by default).
    Precondition: f is deterministic and differentiable at x — points
    within h of a kink (|x| at 0, clip boundaries, argmax ties) are the
    caller's job to avoid.
    """
    if not np.all(np.isfinite(x.data)):
        raise NumericsError("finite_difference_check: x not finite")
    leaf = Tensor(x.data.copy(), requires_grad=True)
    y = f(leaf)
    if y.data.size != 1:
        raise ContractError("finite_difference_check expects scalar-valued f")
    if not np.isfinite(y.data).all():
        raise NumericsError("finite_difference_check: f(x) not finite")
    backward(y)
    analytic = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad

    flat = x.data.reshape(-1)
    n = flat.size
    if max_coords is not None and max_coords < n:
        # deterministic spread: golden-ratio stride over the index range
        idx = np.unique((np.arange(max_coords) * 0.6180339887498949 * n).astype(int) % n)
    else:
        idx = np.arange(n)

    max_err = 0.0
    base = flat.copy()
    for i in idx:
        vp = base.copy()
        vp[i] += h
        vm = base.copy()
        vm[i] -= h
        fp = f(Tensor(vp.reshape(x.data.shape))).data
        fm = f(Tensor(vm.reshape(x.data.shape))).data
        if not (np.isfinite(fp).all() and np.isfinite(fm).all()):
            raise NumericsError("finite_difference_check: perturbed f not finite")
        fd = float((fp - fm).reshape(()) / (2.0 * h))
        err = abs(float(analytic.reshape(-1)[i]) - fd) / max(1.0, abs(fd))
        if err > max_err:
            max_err = err
    return CheckReport(max_rel_err=max_err, passed=max_err <= tol, n_coords=len(idx))
