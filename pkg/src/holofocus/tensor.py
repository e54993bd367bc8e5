"""Dense tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array.  Every primitive below computes its
forward value with numpy and records a vector-Jacobian product (VJP) closure
together with references to its inputs.  :meth:`Tensor.backward` walks the
recorded graph in reverse topological order and accumulates gradients into
the ``grad`` attribute of every leaf that requires one.

Broadcasting is limited to what numpy does for ``add``/``mul`` (bias adds,
masks, scalars); the VJP sums the gradient back down to the operand shape.
"""

from __future__ import annotations

import contextlib
import struct
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor", "ShapeError", "tensor", "no_grad", "is_grad_enabled",
    "add", "sub", "mul", "neg", "matmul", "linear", "concat", "reshape",
    "transpose", "slice_", "roll", "take", "conv2d", "maxpool2d",
    "mean_pool2d", "relu", "gelu", "tanh", "layer_norm", "softmax", "dropout",
    "sum_", "mean", "abs_", "log_cosh", "trunc_normal",
    "save_checkpoint", "load_checkpoint",
]


class ShapeError(ValueError):
    """Raised when a primitive receives operands of incompatible shape."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """N-dimensional real array that participates in a differentiation tape."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_vjp", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 _parents: tuple = (), _vjp: Callable | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = _parents
        self._vjp = _vjp

    # -- introspection ---------------------------------------------------
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

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{rg})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- differentiation -------------------------------------------------
    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf.

        ``self`` must be a scalar unless an explicit upstream ``grad`` is
        given.  Calling twice without zeroing adds the gradients.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward: loss must be scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.dtype)
            if grad.shape != self.shape:
                raise ShapeError(f"backward: grad shape {grad.shape} != tensor shape {self.shape}")
        if not self.requires_grad:
            return

        order = tape(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def tape(root: Tensor) -> list[Tensor]:
    """Return the recorded nodes reachable from ``root`` in topological order.

    Inputs always precede the op that consumed them; backward walks this
    list in exact reverse.
    """
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    arr = np.array(data, dtype=dtype) if dtype is not None else np.array(data)
    return Tensor(arr, requires_grad=requires_grad)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, True, op=op, _parents=tuple(parents), _vjp=vjp)
    return Tensor(data, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def vjp(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _make(ad * bd, (a, b), vjp, "mul")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def log_cosh(a: Tensor) -> Tensor:
    """Elementwise log(cosh(a)), overflow-safe; derivative tanh(a)."""
    x = a.data
    ax = np.abs(x)
    y = ax + np.log1p(np.exp(-2.0 * ax)) - np.log(2.0).astype(x.dtype)
    return _make(y, (a,), lambda g: (g * np.tanh(x),), "log_cosh")


# ---------------------------------------------------------------------------
# linear algebra

def _swap_last(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy semantics (both operands >= 2-D)."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: batch dims do not broadcast, {a.shape} @ {b.shape}") from None
    ad, bd = a.data, b.data

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, _swap_last(bd)), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(_swap_last(ad), g), bd.shape)
        return ga, gb

    return _make(out, (a, b), vjp, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis; ``w`` has shape (in, out)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} does not match weight {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        out = out + b.data

    def vjp(g):
        gx = g @ wd.T if x.requires_grad else None
        g2 = g.reshape(-1, g.shape[-1])
        gw = xd.reshape(-1, xd.shape[-1]).T @ g2 if w.requires_grad else None
        gb = g2.sum(axis=0) if b is not None and b.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, vjp, "linear")


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {shape}") from None
    src = a.shape
    return _make(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,),
                 lambda g: (np.transpose(g, inv),), "transpose")


def slice_(a: Tensor, index) -> Tensor:
    """Basic or advanced indexing; the VJP scatters back with ``np.add.at``."""
    out = a.data[index]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)
    src, dtype = a.shape, a.dtype

    parts = index if isinstance(index, tuple) else (index,)
    advanced = any(isinstance(i, (list, np.ndarray)) for i in parts)

    def vjp(g):
        full = np.zeros(src, dtype=dtype)
        if advanced:
            np.add.at(full, index, g)
        else:
            full[index] += g
        return (full,)

    return _make(out, (a,), vjp, "slice")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: empty input list")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: shape {t.shape} incompatible with {ref} along axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(out, tensors, vjp, "concat")


def roll(a: Tensor, shifts, axes) -> Tensor:
    """Cyclic shift (numpy ``roll`` semantics)."""
    shifts = tuple(shifts) if isinstance(shifts, (tuple, list)) else (shifts,)
    axes = tuple(axes) if isinstance(axes, (tuple, list)) else (axes,)
    back = tuple(-s for s in shifts)
    return _make(np.roll(a.data, shifts, axes), (a,),
                 lambda g: (np.roll(g, back, axes),), "roll")


def take(table: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows ``table[index]`` along axis 0."""
    index = np.asarray(index)
    src, dtype = table.shape, table.dtype

    def vjp(g):
        full = np.zeros(src, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return _make(table.data[index], (table,), vjp, "take")


# ---------------------------------------------------------------------------
# reductions

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    src = a.shape

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, src).copy(),)

    return _make(np.asarray(out), (a,), vjp, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    if n == 0:
        raise ShapeError(f"mean: reduction over empty axes of shape {a.shape}")
    out = a.data.mean(axis=axes, keepdims=keepdims)
    src = a.shape

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, src).copy(),)

    return _make(np.asarray(out), (a,), vjp, "mean")


# ---------------------------------------------------------------------------
# activations and normalization

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0).astype(a.dtype), (a,),
                 lambda g: (g * mask,), "relu")


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    cdf = cdf.astype(x.dtype, copy=False)

    def vjp(g):
        pdf = (_INV_SQRT2PI * np.exp(-0.5 * x * x)).astype(x.dtype, copy=False)
        return (g * (cdf + x * pdf),)

    return _make(x * cdf, (a,), vjp, "gelu")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.shape[axis] == 0:
        raise ShapeError(f"softmax: axis {axis} has length 0 in shape {a.shape}")
    x = a.data
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (a,), vjp, "softmax")


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the optional affine."""
    d = x.shape[-1]
    if gamma is not None and gamma.shape != (d,):
        raise ShapeError(f"layer_norm: gamma {gamma.shape} does not match feature dim {d}")
    if beta is not None and beta.shape != (d,):
        raise ShapeError(f"layer_norm: beta {beta.shape} does not match feature dim {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data if gamma is not None else None
    out = xhat * gd if gd is not None else xhat
    if beta is not None:
        out = out + beta.data

    def vjp(g):
        gh = g * gd if gd is not None else g
        gx = None
        if x.requires_grad:
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead) if gamma is not None and gamma.requires_grad else None
        gb = g.sum(axis=lead) if beta is not None and beta.requires_grad else None
        return gx, gg, gb

    parents = [x]
    if gamma is not None:
        parents.append(gamma)
    if beta is not None:
        if gamma is None:
            raise ShapeError("layer_norm: beta given without gamma")
        parents.append(beta)
    return _make(out, parents, vjp, "layer_norm")


def dropout(a: Tensor, p: float, seed: int, training: bool = True) -> Tensor:
    """Inverted dropout; identity when ``training`` is false or ``p`` is 0."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout: p must lie in [0, 1), got {p}")
    if not training or p == 0:
        return a
    keep = np.random.default_rng(seed).random(a.shape) >= p
    scale = (keep / (1.0 - p)).astype(a.dtype)
    return _make(a.data * scale, (a,), lambda g: (g * scale,), "dropout")


# ---------------------------------------------------------------------------
# convolution and pooling (NCHW)

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D cross-correlation; x is (B, C, H, W), w is (O, C, kh, kw).

    Lowered to a single GEMM over an im2col buffer built on a channels-last
    copy, so the heavy lifting lands in BLAS.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and weight, got {x.shape} and {w.shape}")
    bsz, c, h, wd = x.shape
    o, cw, kh, kw = w.shape
    if c != cw:
        raise ShapeError(f"conv2d: input channels {c} != weight channels {cw}")
    if b is not None and b.shape != (o,):
        raise ShapeError(f"conv2d: bias {b.shape} does not match {o} output channels")
    hp, wp = h + 2 * padding, wd + 2 * padding
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")

    xh = np.transpose(x.data, (0, 2, 3, 1))
    if padding:
        xh = np.pad(xh, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    # (B, ho, wo, kh, kw, C) -> rows of one receptive field each
    win = np.lib.stride_tricks.sliding_window_view(xh, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride].transpose(0, 1, 2, 4, 5, 3)
    cols = win.reshape(bsz * ho * wo, kh * kw * c)
    wmat = w.data.transpose(2, 3, 1, 0).reshape(kh * kw * c, o)
    out = cols @ wmat
    if b is not None:
        out += b.data
    result = np.ascontiguousarray(out.reshape(bsz, ho, wo, o).transpose(0, 3, 1, 2))
    he, we = stride * (ho - 1) + 1, stride * (wo - 1) + 1

    def vjp(g):
        g2 = np.ascontiguousarray(np.transpose(g, (0, 2, 3, 1))).reshape(-1, o)
        gx = gw = gb = None
        if x.requires_grad:
            gcols = (g2 @ wmat.T).reshape(bsz, ho, wo, kh, kw, c)
            gxh = np.zeros(xh.shape, dtype=gcols.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxh[:, i:i + he:stride, j:j + we:stride, :] += gcols[:, :, :, i, j, :]
            if padding:
                gxh = gxh[:, padding:padding + h, padding:padding + wd, :]
            gx = np.ascontiguousarray(np.transpose(gxh, (0, 3, 1, 2)))
        if w.requires_grad:
            gw = (cols.T @ g2).reshape(kh, kw, c, o).transpose(3, 2, 0, 1)
            gw = np.ascontiguousarray(gw)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _make(result, parents, vjp, "conv2d")


def _pool_view(x: Tensor, k: int, op: str) -> np.ndarray:
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected (B, C, H, W), got {x.shape}")
    bsz, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"{op}: spatial dims {h}x{w} not divisible by kernel {k}")
    return x.data.reshape(bsz, c, h // k, k, w // k, k)


def maxpool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping k x k max pooling (stride k); ties route to the first max."""
    v = _pool_view(x, k, "maxpool2d")
    bsz, c, hk, _, wk, _ = v.shape
    flat = v.transpose(0, 1, 2, 4, 3, 5).reshape(bsz, c, hk, wk, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    src = x.shape

    def vjp(g):
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, arg[..., None], g[..., None], axis=-1)
        gf = gf.reshape(bsz, c, hk, wk, k, k).transpose(0, 1, 2, 4, 3, 5)
        return (gf.reshape(src),)

    return _make(out, (x,), vjp, "maxpool2d")


def mean_pool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping k x k average pooling (stride k)."""
    v = _pool_view(x, k, "mean_pool2d")
    out = v.mean(axis=(3, 5))
    src = x.shape

    def vjp(g):
        gg = np.broadcast_to(g[:, :, :, None, :, None] / (k * k), v.shape)
        return (gg.reshape(src).copy(),)

    return _make(out, (x,), vjp, "mean_pool2d")


# ---------------------------------------------------------------------------
# initialization and checkpoints

def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02,
                 dtype=np.float64) -> np.ndarray:
    """Normal(0, std) samples redrawn until they fall within two std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


CHECKPOINT_MAGIC = b"TNSR"
CHECKPOINT_VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Write named arrays in the little-endian ``TNSR`` container."""
    parts = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _DTYPE_CODES:
            raise TypeError(f"checkpoint: unsupported dtype {arr.dtype} for {name!r}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(struct.pack("<B", _DTYPE_CODES[dt]))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a TNSR checkpoint")
    version, count = struct.unpack_from("<HI", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 10
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        (code,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        dt = _CODE_DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        out[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize,
                                  offset=pos).reshape(dims).copy()
        pos += nbytes
    if pos != len(buf):
        raise ValueError(f"{path}: {len(buf) - pos} trailing bytes")
    return out
