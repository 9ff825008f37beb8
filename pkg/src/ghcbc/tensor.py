"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Every learned component in the package is expressed through the ops here.
Shapes are strict: elementwise ops broadcast only by expanding leading
dimensions (one operand's shape must be a suffix of the other's); anything
else raises DimensionError.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .errors import DimensionError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / frozen features)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-d float64 array plus an optional backward-graph record."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    # -- introspection ----------------------------------------------------

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
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- autodiff ---------------------------------------------------------

    def _accum(self, g: np.ndarray):
        # copy on first write: g may alias a sibling's gradient buffer
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Reverse-mode sweep from this tensor through its recorded graph."""
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise DimensionError(
                    f"seed gradient shape {grad.shape} != tensor shape {self.data.shape}"
                )
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accum(grad)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def relu(self):
        return relu(self)

    def gelu(self):
        return gelu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def swapaxes(self, i: int, j: int):
        axes = list(range(self.ndim))
        axes[i], axes[j] = axes[j], axes[i]
        return transpose(self, tuple(axes))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _suffix_broadcastable(sa: tuple, sb: tuple) -> bool:
    small, big = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    return big[len(big) - len(small):] == small


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_elementwise(a: Tensor, b: Tensor, op: str):
    if not _suffix_broadcastable(a.shape, b.shape):
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable")


# -- elementwise binary ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


# -- elementwise unary -----------------------------------------------------


def relu(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accum(g * (a.data > 0.0))

    return _make(np.maximum(a.data, 0.0), (a,), backward)


_erf = np.vectorize(math.erf, otypes=[np.float64])
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a) -> Tensor:
    a = _as_tensor(a)
    cdf = 0.5 * (1.0 + _erf(a.data * _INV_SQRT2))

    def backward(g):
        if a.requires_grad:
            pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)
            a._accum(g * (cdf + a.data * pdf))

    return _make(a.data * cdf, (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum(g * out_data)

    return _make(out_data, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accum(g / a.data)

    return _make(np.log(a.data), (a,), backward)


# -- matmul ----------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul requires 2-d+ operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    if not _suffix_broadcastable(a.shape[:-2], b.shape[:-2]):
        raise DimensionError(f"matmul batch dimensions disagree: {a.shape} x {b.shape}")

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accum(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accum(_unbroadcast(gb, b.shape))

    return _make(np.matmul(a.data, b.data), (a, b), backward)


# -- reductions and shape --------------------------------------------------


def _check_axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


def tsum(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    if axis is not None:
        axis = _check_axis(axis, a.ndim, "sum")

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accum(np.full_like(a.data, g))
        else:
            a._accum(np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _make(a.data.sum(axis=axis), (a,), backward)


def mean(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    if axis is not None:
        axis = _check_axis(axis, a.ndim, "mean")
    n = a.size if axis is None else a.shape[axis]

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accum(np.full_like(a.data, g / n))
        else:
            a._accum(np.broadcast_to(np.expand_dims(g / n, axis), a.shape).copy())

    return _make(a.data.mean(axis=axis), (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of zero tensors")
    ndim = tensors[0].ndim
    axis = _check_axis(axis, ndim, "concat")
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if t.ndim != ndim or other[:axis] + other[axis + 1:] != base[:axis] + base[axis + 1:]:
            raise DimensionError(
                f"concat operands disagree off axis {axis}: {tensors[0].shape} vs {t.shape}"
            )
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * ndim
                idx[axis] = slice(lo, hi)
                t._accum(g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if shape.count(-1) > 1:
        raise DimensionError(f"reshape {a.shape} -> {shape}: at most one -1 allowed")
    if -1 in shape:
        rest = int(np.prod([s for s in shape if s != -1], dtype=np.int64))
        if rest == 0 or a.size % rest:
            raise DimensionError(f"reshape {a.shape} -> {shape} changes element count")
        shape = tuple(a.size // rest if s == -1 else s for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise DimensionError(f"reshape {a.shape} -> {shape} changes element count")

    def backward(g):
        if a.requires_grad:
            a._accum(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), backward)


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(_check_axis(ax, a.ndim, "transpose") for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose axes {axes} are not a permutation for {a.shape}")
    inverse = np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            a._accum(g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), backward)


def broadcast_to(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if not _suffix_broadcastable(a.shape, shape) or len(shape) < a.ndim:
        raise DimensionError(f"cannot expand {a.shape} to {shape} along leading dims")

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), backward)


def take(a, key) -> Tensor:
    """Basic slicing/indexing with scatter-add backward."""
    a = _as_tensor(a)
    out_data = a.data[key]
    if np.isscalar(out_data) or out_data.ndim == 0:
        out_data = np.asarray(out_data, dtype=np.float64)

    def backward(g):
        if a.requires_grad:
            gp = np.zeros_like(a.data)
            np.add.at(gp, key, g)
            a._accum(gp)

    return _make(np.array(out_data, dtype=np.float64), (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    axis = _check_axis(axis, a.ndim, "softmax")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            a._accum((g - dot) * out_data)

    return _make(out_data, (a,), backward)


def layernorm(a, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    a = _as_tensor(a)
    if a.ndim < 1:
        raise DimensionError("layernorm needs at least one axis")
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.data - mu) * inv

    def backward(g):
        if a.requires_grad:
            gm = g.mean(axis=-1, keepdims=True)
            gym = (g * y).mean(axis=-1, keepdims=True)
            a._accum(inv * (g - gm - y * gym))

    return _make(y, (a,), backward)


def im2col(a, kh: int, kw: int, stride: int = 1, padding: int = 0) -> Tensor:
    """Extract conv patches as rows: (..., C, H, W) -> (..., OH*OW, C*kh*kw).

    Pairing this with matmul against a (C*kh*kw, OC) weight realizes a
    2-d convolution.
    """
    a = _as_tensor(a)
    if a.ndim < 3:
        raise DimensionError(f"im2col needs (..., C, H, W), got {a.shape}")
    *lead, c, h, w = a.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise DimensionError(f"im2col: kernel ({kh},{kw}) too large for input {a.shape}")
    pad_spec = [(0, 0)] * len(lead) + [(0, 0), (padding, padding), (padding, padding)]
    padded = np.pad(a.data, pad_spec) if padding else a.data
    # windows: (..., C, OH, OW, kh, kw)
    win = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(-2, -1))
    win = win[..., ::stride, ::stride, :, :]
    nd = win.ndim
    # -> (..., OH, OW, C, kh, kw) -> (..., OH*OW, C*kh*kw)
    perm = tuple(range(nd - 5)) + (nd - 4, nd - 3, nd - 5, nd - 2, nd - 1)
    cols = win.transpose(perm).reshape(*lead, oh * ow, c * kh * kw)

    def backward(g):
        if not a.requires_grad:
            return
        gk = g.reshape(*lead, oh, ow, c, kh, kw)
        perm_back = tuple(range(len(lead))) + tuple(
            len(lead) + k for k in (2, 3, 4, 0, 1)
        )
        gk = gk.transpose(perm_back)  # (..., C, kh, kw, OH, OW)
        gpad = np.zeros((*lead, c, h + 2 * padding, w + 2 * padding))
        for i in range(kh):
            for j in range(kw):
                gpad[..., :, i:i + stride * oh:stride, j:j + stride * ow:stride] += gk[
                    ..., :, i, j, :, :
                ]
        if padding:
            gpad = gpad[..., :, padding:padding + h, padding:padding + w]
        a._accum(gpad)

    return _make(np.ascontiguousarray(cols), (a,), backward)
