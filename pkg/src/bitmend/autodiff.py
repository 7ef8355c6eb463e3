"""Dense float tensors with reverse-mode automatic differentiation.

The operation set is exactly what the restoration network and its losses
need: 2-D convolution, a small family of elementwise ops, reductions,
concatenation, 2x average downsampling, and an index-map gather that the
warping, padding and upsampling layers are built from. Tensors default to
32-bit floats; 64-bit tensors are supported so gradients can be verified
against central finite differences.

Tensors are immutable values once created and operations are pure. Graphs
are recorded only while gradients are enabled (see `no_grad`), so inference
keeps no references to intermediates.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _as_float_array(data, dtype):
    arr = np.asarray(data)
    if dtype is None:
        dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
    # np.ascontiguousarray would promote 0-d scalars to shape (1,)
    out = np.asarray(arr, dtype=dtype)
    if out.ndim and not out.flags["C_CONTIGUOUS"]:
        out = np.ascontiguousarray(out)
    return out


class Tensor:
    """N-dimensional float array, optionally tracked for backprop.

    Leaves are created directly; interior nodes carry the parent tensors and
    a closure that maps the output gradient to per-parent gradients. Other
    modules may build their own linear primitives by constructing interior
    nodes through `from_op`.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_float_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None

    @staticmethod
    def from_op(data: np.ndarray, parents: Sequence["Tensor"], backward_fn: Callable):
        """Wrap an op result, recording the graph edge if grads are enabled."""
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = False
        if _GRAD_ENABLED and any(p._tracked for p in parents):
            out.parents = tuple(parents)
            out.backward_fn = backward_fn
        else:
            out.parents = ()
            out.backward_fn = None
        return out

    @property
    def _tracked(self):
        return self.requires_grad or self.backward_fn is not None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {tuple(self.shape)}")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name})"

    # -- graph traversal ---------------------------------------------------

    def _topo_order(self):
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p._tracked and id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self):
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.size != 1:
            raise ShapeError(
                f"backward requires a scalar loss, got shape {tuple(self.shape)}"
            )
        order = self._topo_order()
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node.backward_fn is None or node.grad is None:
                continue
            for parent, pgrad in zip(node.parents, node.backward_fn(node.grad)):
                if pgrad is None or not parent._tracked:
                    continue
                if parent.grad is None:
                    parent.grad = pgrad
                else:
                    parent.grad = parent.grad + pgrad

    # -- operator sugar ------------------------------------------------------

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

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not part of the op set")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def abs(self):
        return absolute(self)

    def sum(self, dims=None):
        return reduce_sum(self, dims)

    def mean(self, dims=None):
        return reduce_mean(self, dims)

    def reshape(self, shape):
        return reshape(self, shape)

    def clamp(self, lo, hi):
        return clamp(self, lo, hi)


def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, dtype=np.float32, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def full(shape, value, dtype=np.float32, requires_grad=False):
    return Tensor(np.full(shape, value, dtype=dtype), requires_grad=requires_grad)


def collect_grads(params: dict) -> dict:
    """Gradients for a named parameter dict; zeros for unreached leaves."""
    out = {}
    for name, p in params.items():
        out[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
    return out


def zero_grads(params: Iterable[Tensor] | dict):
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.grad = None


# -- broadcasting helpers ------------------------------------------------------


def _check_broadcast(sa, sb):
    if len(sa) != len(sb):
        raise ShapeError(f"rank mismatch {sa} vs {sb}")
    for x, y in zip(sa, sb):
        if x != y and x != 1 and y != 1:
            raise ShapeError(f"shapes {sa} and {sb} do not broadcast (extent-1 only)")


def _unbroadcast(grad, shape):
    if grad.shape == tuple(shape):
        return grad
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True)


def _coerce_pair(a, b):
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        return a, b, True
    if isinstance(a, Tensor):
        return a, float(b), False
    return b, float(a), False


# -- elementwise ops -----------------------------------------------------------


def add(a, b):
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        _check_broadcast(a.shape, b.shape)
        data = a.data + b.data

        def bwd(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor.from_op(data, (a, b), bwd)
    t, s, _ = _coerce_pair(a, b)
    return Tensor.from_op(t.data + s, (t,), lambda g: (g,))


def sub(a, b):
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        _check_broadcast(a.shape, b.shape)
        data = a.data - b.data

        def bwd(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return Tensor.from_op(data, (a, b), bwd)
    if isinstance(a, Tensor):
        return Tensor.from_op(a.data - float(b), (a,), lambda g: (g,))
    return Tensor.from_op(float(a) - b.data, (b,), lambda g: (-g,))


def mul(a, b):
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        _check_broadcast(a.shape, b.shape)
        data = a.data * b.data

        def bwd(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return Tensor.from_op(data, (a, b), bwd)
    t, s, _ = _coerce_pair(a, b)
    return Tensor.from_op(t.data * s, (t,), lambda g: (g * s,))


def leaky_relu(x: Tensor, slope=0.2):
    mask = x.data > 0
    data = np.where(mask, x.data, slope * x.data)

    def bwd(g):
        return (np.where(mask, g, slope * g),)

    return Tensor.from_op(data, (x,), bwd)


def sigmoid(x: Tensor):
    e = np.exp(-np.abs(x.data))
    data = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def bwd(g):
        return (g * data * (1.0 - data),)

    return Tensor.from_op(data, (x,), bwd)


def clamp(x: Tensor, lo, hi):
    data = np.clip(x.data, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)

    def bwd(g):
        return (np.where(inside, g, 0.0),)

    return Tensor.from_op(data, (x,), bwd)


def absolute(x: Tensor):
    data = np.abs(x.data)
    sign = np.sign(x.data)

    def bwd(g):
        return (g * sign,)

    return Tensor.from_op(data, (x,), bwd)


# -- reductions ----------------------------------------------------------------


def _norm_dims(dims, ndim):
    if dims is None:
        return tuple(range(ndim))
    if isinstance(dims, int):
        dims = [dims]
    dims = tuple(int(d) % ndim for d in dims)
    if len(dims) == 0:
        raise ShapeError("reduction over an empty dimension list")
    if len(set(dims)) != len(dims):
        raise ShapeError(f"duplicate reduction dims {dims}")
    return dims


def reduce_sum(x: Tensor, dims=None):
    dims = _norm_dims(dims, x.ndim)
    data = x.data.sum(axis=dims)
    in_shape = x.shape

    def bwd(g):
        ge = np.expand_dims(g, dims) if g.ndim else g
        return (np.broadcast_to(ge, in_shape).copy(),)

    return Tensor.from_op(data, (x,), bwd)


def reduce_mean(x: Tensor, dims=None):
    dims = _norm_dims(dims, x.ndim)
    count = 1
    for d in dims:
        count *= x.shape[d]
    data = x.data.mean(axis=dims)
    in_shape = x.shape

    def bwd(g):
        ge = np.expand_dims(g, dims) if g.ndim else g
        return (np.broadcast_to(ge, in_shape) / count,)

    return Tensor.from_op(data, (x,), bwd)


def global_avg_pool(x: Tensor):
    """Mean over the two trailing spatial dims, kept as extent 1."""
    if x.ndim < 3:
        raise ShapeError("global_avg_pool expects [..., H, W]")
    h, w = x.shape[-2], x.shape[-1]
    data = x.data.mean(axis=(-2, -1), keepdims=True)

    def bwd(g):
        return (np.broadcast_to(g, x.shape) / (h * w),)

    return Tensor.from_op(data, (x,), bwd)


# -- shape ops -----------------------------------------------------------------


def reshape(x: Tensor, shape):
    shape = tuple(shape)
    data = x.data.reshape(shape)
    in_shape = x.shape

    def bwd(g):
        return (g.reshape(in_shape),)

    return Tensor.from_op(data, (x,), bwd)


def concat(tensors: Sequence[Tensor], dim: int):
    if not tensors:
        raise ShapeError("concat of an empty list")
    ndim = tensors[0].ndim
    dim = int(dim) % ndim
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        if t.ndim != ndim:
            raise ShapeError("concat rank mismatch")
        for d in range(ndim):
            if d != dim and t.shape[d] != ref[d]:
                raise ShapeError(
                    f"concat extent mismatch on dim {d}: {t.shape} vs {tuple(ref)}"
                )
    data = np.concatenate([t.data for t in tensors], axis=dim)
    splits = np.cumsum([t.shape[dim] for t in tensors])[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=dim))

    return Tensor.from_op(data, tuple(tensors), bwd)


def narrow(x: Tensor, dim: int, start: int, length: int):
    """Slice `length` extents from `start` along `dim`."""
    dim = int(dim) % x.ndim
    if start < 0 or start + length > x.shape[dim]:
        raise ShapeError(f"narrow [{start}:{start + length}] exceeds extent {x.shape[dim]}")
    index = [slice(None)] * x.ndim
    index[dim] = slice(start, start + length)
    index = tuple(index)
    data = x.data[index].copy()
    in_shape = x.shape

    def bwd(g):
        gx = np.zeros(in_shape, dtype=g.dtype)
        gx[index] = g
        return (gx,)

    return Tensor.from_op(data, (x,), bwd)


def take_map(x: Tensor, rows: np.ndarray, cols: np.ndarray):
    """Gather over the two trailing dims: out[..., i, j] = x[..., rows[i,j], cols[i,j]].

    The index maps are plain integer arrays (not differentiated); gradient is
    the transposed scatter-add. Warping, reflection padding and
    nearest-neighbor upsampling are all instances of this primitive.
    """
    if x.ndim < 2:
        raise ShapeError("take_map expects [..., H, W]")
    h, w = x.shape[-2], x.shape[-1]
    if rows.shape != cols.shape:
        raise ShapeError("row/col index maps differ in shape")
    if rows.min() < 0 or rows.max() >= h or cols.min() < 0 or cols.max() >= w:
        raise ShapeError("index map out of bounds")
    lead = x.shape[:-2]
    flat_idx = (rows * w + cols).ravel()
    xin = x.data.reshape(lead + (h * w,))
    data = xin[..., flat_idx].reshape(lead + rows.shape)

    def bwd(g):
        gf = g.reshape(lead + (-1,))
        gx = np.zeros(lead + (h * w,), dtype=g.dtype)
        np.add.at(gx.reshape(-1, h * w), (slice(None), flat_idx), gf.reshape(-1, gf.shape[-1]))
        return (gx.reshape(x.shape),)

    return Tensor.from_op(data, (x,), bwd)


# -- convolution and pooling ---------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1, padding: int = 0):
    """Cross-correlation of [N,Cin,H,W] with [Cout,Cin,kh,kw], zero padding."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be [N,C,H,W], got {tuple(x.shape)}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be [Cout,Cin,kh,kw], got {tuple(weight.shape)}")
    n, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d channel mismatch: input Cin={cin}, weight Cin={cin_w}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d bias must be [{cout}], got {tuple(bias.shape)}")
    if stride < 1:
        raise ShapeError("conv2d stride must be >= 1")
    if padding < 0:
        raise ShapeError("conv2d padding must be >= 0")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError("kernel larger than padded input")

    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    dtype = np.result_type(x.data, weight.data)
    if padding:
        xp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=dtype)
        xp[:, :, padding : padding + h, padding : padding + w] = x.data
    else:
        xp = x.data

    out = np.zeros((n, cout, ho, wo), dtype=dtype)
    for u in range(kh):
        for v in range(kw):
            xs = xp[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride]
            out += np.einsum("ncij,oc->noij", xs, weight.data[:, :, u, v], optimize=True)
    if bias is not None:
        out += bias.data[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def bwd(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(weight.data)
        for u in range(kh):
            for v in range(kw):
                xs = xp[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride]
                gw[:, :, u, v] = np.einsum("noij,ncij->oc", g, xs, optimize=True)
                gxp[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride] += np.einsum(
                    "noij,oc->ncij", g, weight.data[:, :, u, v], optimize=True
                )
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return Tensor.from_op(out, parents, bwd)


def avg_downsample2x(x: Tensor):
    """2x mean pooling; odd trailing row/column averaged over the partial window."""
    if x.ndim < 2:
        raise ShapeError("avg_downsample2x expects [..., H, W]")
    h, w = x.shape[-2], x.shape[-1]
    if h < 2 or w < 2:
        raise ShapeError("avg_downsample2x needs H, W >= 2")
    ho, wo = (h + 1) // 2, (w + 1) // 2
    hp, wp = 2 * ho, 2 * wo
    pad = [(0, 0)] * (x.ndim - 2) + [(0, hp - h), (0, wp - w)]
    xp = np.pad(x.data, pad) if (hp != h or wp != w) else x.data
    total = (
        xp[..., 0::2, 0::2] + xp[..., 1::2, 0::2] + xp[..., 0::2, 1::2] + xp[..., 1::2, 1::2]
    )
    ch = np.full(ho, 2, dtype=x.data.dtype)
    cw = np.full(wo, 2, dtype=x.data.dtype)
    if h % 2:
        ch[-1] = 1
    if w % 2:
        cw[-1] = 1
    counts = ch[:, None] * cw[None, :]
    data = total / counts

    def bwd(g):
        ge = np.repeat(np.repeat(g / counts, 2, axis=-2), 2, axis=-1)
        return (np.ascontiguousarray(ge[..., :h, :w]),)

    return Tensor.from_op(data, (x,), bwd)


def reflect_pad2d(x: Tensor, pad_bottom: int, pad_right: int):
    """Mirror-extend the trailing dims; padding may exceed the input size
    (the reflection is iterated, matching repeated np.pad calls)."""
    h, w = x.shape[-2], x.shape[-1]
    rows = _reflect_indices(h, pad_bottom)
    cols = _reflect_indices(w, pad_right)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return take_map(x, rr, cc)


def _reflect_indices(n: int, pad: int) -> np.ndarray:
    idx = np.arange(n)
    while pad > 0:
        step = min(pad, len(idx) - 1)
        idx = np.pad(idx, (0, step), mode="reflect")
        pad -= step
    return idx
