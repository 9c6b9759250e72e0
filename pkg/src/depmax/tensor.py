"""Dense tensors with reverse-mode automatic differentiation.

A deliberately small engine: a closed set of differentiable primitives
(elementwise arithmetic with broadcasting, matmul, conv2d, batch norm,
reductions, relu/hinge, stabilized sqrt, exp/log) is enough to express
the encoder, the projector, and every loss term. Backward is a reverse
topological sweep with additive gradient accumulation; everything runs
single-threaded per step, so gradients are bitwise reproducible.

Two float widths are supported run-wide: float32 for training and
float64 for verification (finite-difference gradient checks need the
extra precision).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError

EPS_SQRT = 1e-12  # stabilizer inside every sqrt that can receive 0
EPS_BN = 1e-5  # batch-norm variance stabilizer

_default_dtype = np.float32


def set_default_dtype(dtype) -> None:
    """Set the run-wide float width (np.float32 or np.float64)."""
    global _default_dtype
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ConfigError(f"unsupported float width {dt}")
    _default_dtype = dt.type


def default_dtype():
    return _default_dtype


@contextlib.contextmanager
def using_dtype(dtype):
    """Temporarily switch the default float width (used by oracle tests)."""
    prev = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


class Tensor:
    """N-dimensional real array with an optional backward-graph node."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _default_dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    # -- bookkeeping ---------------------------------------------------

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

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._backward = None
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- backward ------------------------------------------------------

    def backward(self) -> None:
        """Reverse sweep from a scalar root; accumulates into .grad fields."""
        if self.data.size != 1:
            raise ShapeError(f"backward root must be scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            return
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _from_op(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise primitives ------------------------------------------------


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _coerce(b, a)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.data.shape))

    return _from_op(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _coerce(b, a)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.data.shape))

    return _from_op(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _coerce(b, a)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.data.shape))

    return _from_op(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _coerce(b, a)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _from_op(a.data / b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        a._accum(-g)

    return _from_op(-a.data, (a,), bw)


def square(a: Tensor) -> Tensor:
    def bw(g):
        a._accum(g * (2.0 * a.data))

    return _from_op(a.data * a.data, (a,), bw)


def sqrt_stable(a: Tensor, eps: float = EPS_SQRT) -> Tensor:
    """sqrt(x + eps); finite value and gradient everywhere, including 0."""
    out_data = np.sqrt(a.data + eps)

    def bw(g):
        a._accum(g * (0.5 / out_data))

    return _from_op(out_data, (a,), bw)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bw(g):
        a._accum(g * out_data)

    return _from_op(out_data, (a,), bw)


def log(a: Tensor) -> Tensor:
    def bw(g):
        a._accum(g / a.data)

    return _from_op(np.log(a.data), (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        a._accum(g * mask)

    return _from_op(np.maximum(a.data, 0), (a,), bw)


def maximum(a: Tensor, c: float) -> Tensor:
    """Elementwise max(x, c) against a constant; subgradient 0 at the kink."""
    mask = a.data > c

    def bw(g):
        a._accum(g * mask)

    return _from_op(np.maximum(a.data, c), (a,), bw)


# -- shape primitives --------------------------------------------------------


def reshape(a: Tensor, *shape) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = a.data.shape

    def bw(g):
        a._accum(g.reshape(old))

    return _from_op(np.ascontiguousarray(a.data).reshape(shape), (a,), bw)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.data.shape}")

    def bw(g):
        a._accum(g.T)

    return _from_op(a.data.T, (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.data.shape} @ {b.data.shape}")

    def bw(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _from_op(a.data @ b.data, (a, b), bw)


# -- reductions --------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def _expand_reduced(g, shape, axes, keepdims):
    if axes is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.data.ndim)
    shape = a.data.shape

    def bw(g):
        a._accum(_expand_reduced(g, shape, axes, keepdims).astype(a.data.dtype))

    return _from_op(a.data.sum(axis=axes, keepdims=keepdims), (a,), bw)


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.data.ndim)
    shape = a.data.shape
    count = a.data.size if axes is None else int(np.prod([shape[ax] for ax in axes]))

    def bw(g):
        a._accum(_expand_reduced(g / count, shape, axes, keepdims).astype(a.data.dtype))

    return _from_op(a.data.mean(axis=axes, keepdims=keepdims), (a,), bw)


# -- structured primitives ---------------------------------------------------


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of x (B,C,H,W) with kernels w (F,C,k,k)."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d operands, got {x.data.shape} and {w.data.shape}")
    b, c, h, wd = x.data.shape
    f, cw, k, k2 = w.data.shape
    if cw != c or k != k2:
        raise ShapeError(f"conv2d kernel {w.data.shape} does not match input {x.data.shape}")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    if k > h + 2 * pad or k > wd + 2 * pad or ho < 1 or wo < 1:
        raise ConfigError(
            f"conv2d output extent non-positive for input {x.data.shape}, "
            f"kernel {k}, stride {stride}, pad {pad}"
        )
    xd = np.ascontiguousarray(x.data)
    wd_ = np.ascontiguousarray(w.data)
    out_data = kernels.conv2d_forward(xd, wd_, stride, pad)

    def bw(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            x._accum(kernels.conv2d_backward_x(g, wd_, stride, pad, h, wd))
        if w.requires_grad:
            w._accum(kernels.conv2d_backward_w(g, xd, stride, pad, k))

    return _from_op(out_data, (x, w), bw)


def batch_norm(
    x: Tensor,
    gamma: Optional[Tensor],
    beta: Optional[Tensor],
    running_mean: Optional[np.ndarray],
    running_var: Optional[np.ndarray],
    mode: str = "train",
    momentum: float = 0.1,
    eps: float = EPS_BN,
) -> Tensor:
    """Batch normalization over (B,) features or (B,C,H,W) channels.

    Train mode normalizes with population batch statistics and updates
    the running buffers in place; eval mode uses the running buffers.
    The optional affine (gamma, beta) is applied afterwards.
    """
    if x.data.ndim == 2:
        axes = (0,)
        pshape = (1, x.data.shape[1])
    elif x.data.ndim == 4:
        axes = (0, 2, 3)
        pshape = (1, x.data.shape[1], 1, 1)
    else:
        raise ShapeError(f"batch_norm expects 2-d or 4-d input, got {x.data.shape}")
    if mode == "train":
        if x.data.shape[0] < 2:
            raise ShapeError("degenerate batch: batch_norm needs batch extent >= 2 in train mode")
        m = mean_(x, axis=axes, keepdims=True)
        v = mean_(square(sub(x, m)), axis=axes, keepdims=True)
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * m.data.reshape(-1)
        if running_var is not None:
            running_var *= 1.0 - momentum
            running_var += momentum * v.data.reshape(-1)
        xhat = div(sub(x, m), sqrt_stable(v, eps))
    elif mode == "eval":
        if running_mean is None or running_var is None:
            raise ConfigError("batch_norm eval mode needs running statistics")
        rm = running_mean.reshape(pshape).astype(x.data.dtype)
        rs = np.sqrt(running_var.reshape(pshape).astype(x.data.dtype) + eps)
        xhat = div(sub(x, Tensor(rm)), Tensor(rs))
    else:
        raise ConfigError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")
    if gamma is not None:
        xhat = add(mul(xhat, reshape(gamma, pshape)), reshape(beta, pshape))
    return xhat


# -- verification harness ----------------------------------------------------


def gradients(loss: Tensor, leaves: Sequence[Tensor]) -> list[np.ndarray]:
    """Backward from `loss`; returns grads for `leaves`, zeros if untouched."""
    loss.backward()
    return [
        leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves
    ]


def grad_check(
    f: Callable[[Tensor], Tensor],
    x,
    h: float = 1e-5,
    exclude: Optional[np.ndarray] = None,
) -> float:
    """Max relative error between the analytic gradient of f and central
    finite differences, evaluated coordinate by coordinate in float64.

    `exclude` is an optional boolean mask of coordinates to skip (known
    kinks of relu/hinge where the subgradient convention and the
    difference quotient legitimately disagree).
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    with using_dtype(np.float64):
        xt = Tensor(base.copy(), requires_grad=True)
        f(xt).backward()
        analytic = xt.grad.reshape(-1).copy()
        numeric = np.empty_like(analytic)
        flat = base.reshape(-1)
        for i in range(flat.size):
            pert = base.copy()
            pert.reshape(-1)[i] = flat[i] + h
            fp = f(Tensor(pert)).item()
            pert.reshape(-1)[i] = flat[i] - h
            fm = f(Tensor(pert)).item()
            numeric[i] = (fp - fm) / (2.0 * h)
    rel = np.abs(analytic - numeric) / np.maximum(
        np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8
    )
    if exclude is not None:
        rel = rel[~exclude.reshape(-1)]
    return float(rel.max()) if rel.size else 0.0
