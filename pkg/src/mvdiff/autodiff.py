"""Tape-based reverse-mode autodiff over float64 numpy storage.

A :class:`Tensor` is an immutable contiguous float64 array plus a
``requires_grad`` flag. Primitive operations append nodes to the module-level
:class:`GradTape`; :func:`backward` replays the tape once in reverse
(execution order is a valid topological order) and accumulates ``.grad`` on
leaf tensors.

The primitive set is deliberately small: matmul, elementwise add/sub/mul,
scalar ops, sqrt, GELU, layer norm, softmax, reshape/permute, concat/narrow,
strided 3D convolution, average pooling, embedding lookup, and sum/mean
reductions. Everything upstream (attention, feed-forward nets, losses) is
composed from these.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import ContractError, ShapeMismatchError


class Tensor:
    """Contiguous row-major float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "is_leaf")

    def __init__(self, data, requires_grad: bool = False, _leaf: bool = True):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.is_leaf = _leaf

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add_scalar(self, other) if np.isscalar(other) else add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add_scalar(self, -other) if np.isscalar(other) else sub(self, other)

    def __mul__(self, other):
        return mul_scalar(self, other) if np.isscalar(other) else mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


class _Node:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class GradTape:
    """Ordered record of executed primitives.

    Nodes are appended in execution order, so a single reverse sweep visits
    them in reverse topological order; :func:`backward` consumes the tape.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        self.nodes.clear()


_tape = GradTape()
_grad_enabled = True


def active_tape() -> GradTape:
    return _tape


@contextmanager
def no_grad():
    """Disable tape recording inside the block (sampling, oracles, metrics)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _record(inputs: tuple[Tensor, ...], out_data: np.ndarray, backward_fn) -> Tensor:
    """Wrap a primitive result; append a tape node when gradients are live."""
    track = _grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track, _leaf=not track)
    if track:
        _tape.nodes.append(_Node(inputs, out, backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf.

    The tape is consumed: it is empty after this call.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    if loss.is_leaf and loss.requires_grad:
        loss.grad = _accum(loss.grad, np.ones_like(loss.data))
    for node in reversed(_tape.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        for t, g in zip(node.inputs, node.backward_fn(g_out)):
            if g is None or not t.requires_grad:
                continue
            if t.is_leaf:
                t.grad = _accum(t.grad, g)
            else:
                key = id(t)
                grads[key] = g if key not in grads else grads[key] + g
    _tape.clear()


def _accum(current: np.ndarray | None, g: np.ndarray) -> np.ndarray:
    return g.copy() if current is None else current + g


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return _record(
        (a, b),
        out,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return _record(
        (a, b),
        out,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    return _record(
        (a, b),
        out,
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record((a,), a.data + c, lambda g: (g,))


def mul_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record((a,), a.data * c, lambda g: (g * c,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _record((a,), out, lambda g: (g * (0.5 / out),))


def gelu(a: Tensor) -> Tensor:
    k = kernels.active()
    out = k.gelu_fwd(a.data)
    return _record((a,), out, lambda g: (kernels.active().gelu_bwd(a.data, g),))


# ---------------------------------------------------------------------------
# Matmul
# ---------------------------------------------------------------------------


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Raw ndarray matmul routed through the kernel backend.

    Normalizes to the two kernel-supported layouts: plain 2D x 2D and
    stacked 3D with equal batch dims. ``ND x 2D`` flattens the leading dims.
    """
    k = kernels.active()
    if a.ndim == 2 and b.ndim == 2:
        return k.matmul(a, b)
    if b.ndim == 2:
        lead = a.shape[:-1]
        out = k.matmul(np.ascontiguousarray(a).reshape(-1, a.shape[-1]), b)
        return out.reshape(*lead, b.shape[-1])
    if a.ndim == b.ndim and a.shape[:-2] == b.shape[:-2]:
        lead = a.shape[:-2]
        a3 = np.ascontiguousarray(a).reshape(-1, a.shape[-2], a.shape[-1])
        b3 = np.ascontiguousarray(b).reshape(-1, b.shape[-2], b.shape[-1])
        return k.matmul(a3, b3).reshape(*lead, a.shape[-2], b.shape[-1])
    return np.matmul(a, b)  # broadcast batch dims: not on the hot path


def _swap_last(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul: inner dimensions disagree: {a.shape} vs {b.shape}")

    out = _mm(a.data, b.data)

    def bwd(g):
        ga = _unbroadcast(_mm(g, _swap_last(b.data)), a.shape) if a.requires_grad else None
        if b.requires_grad:
            if b.ndim == 2:
                a2 = np.ascontiguousarray(a.data).reshape(-1, a.shape[-1])
                g2 = np.ascontiguousarray(g).reshape(-1, g.shape[-1])
                gb = _mm(a2.T, g2)
            else:
                gb = _unbroadcast(_mm(_swap_last(a.data), g), b.shape)
        else:
            gb = None
        return ga, gb

    return _record((a, b), out, bwd)


# ---------------------------------------------------------------------------
# Normalization / softmax
# ---------------------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last (channel) axis with learnable scale/shift."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeMismatchError(
            f"layer_norm: scale/shift must be ({x.shape[-1]},), got {gamma.shape} and {beta.shape}"
        )
    k = kernels.active()
    y, mean, rstd = k.layernorm_fwd(x.data, gamma.data, beta.data, eps)

    def bwd(g):
        dx, dgamma, dbeta = kernels.active().layernorm_bwd(x.data, gamma.data, mean, rstd, g)
        return dx, dgamma, dbeta

    return _record((x, gamma, beta), y, bwd)


def softmax_lastdim(x: Tensor) -> Tensor:
    """Max-stabilized softmax over the last axis; slices sum to 1."""
    k = kernels.active()
    y = k.softmax_lastdim(x.data)
    return _record((x,), y, lambda g: (kernels.active().softmax_bwd(y, g),))


# ---------------------------------------------------------------------------
# Shape ops
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = x.data.reshape(shape)
    return _record((x,), out, lambda g: (g.reshape(x.shape),))


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(int(a) for a in axes)
    inv = tuple(int(i) for i in np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(x.data, axes))
    return _record((x,), out, lambda g: (np.ascontiguousarray(np.transpose(g, inv)),))


def concat(tensors, axis: int) -> Tensor:
    tensors = tuple(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        slicer = [slice(None)] * g.ndim
        pieces = []
        for i in range(len(tensors)):
            slicer[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            pieces.append(np.ascontiguousarray(g[tuple(slicer)]))
        return tuple(pieces)

    return _record(tensors, out, bwd)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    slicer = [slice(None)] * x.ndim
    slicer[axis] = slice(start, start + length)
    slicer = tuple(slicer)
    out = np.ascontiguousarray(x.data[slicer])

    def bwd(g):
        gx = np.zeros(x.shape)
        gx[slicer] = g
        return (gx,)

    return _record((x,), out, bwd)


def split(x: Tensor, sizes, axis: int) -> list[Tensor]:
    if sum(sizes) != x.shape[axis]:
        raise ShapeMismatchError(f"split sizes {sizes} do not cover axis {axis} of {x.shape}")
    parts, start = [], 0
    for s in sizes:
        parts.append(narrow(x, axis, start, s))
        start += s
    return parts


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bwd(g):
        if not keepdims:
            g = g.reshape(tuple(1 if i in axes else n for i, n in enumerate(x.shape)))
        return (np.ascontiguousarray(np.broadcast_to(g, x.shape)),)

    return _record((x,), out, bwd)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def bwd(g):
        if not keepdims:
            g = g.reshape(tuple(1 if i in axes else n for i, n in enumerate(x.shape)))
        return (np.ascontiguousarray(np.broadcast_to(g, x.shape)) / count,)

    return _record((x,), out, bwd)


# ---------------------------------------------------------------------------
# Convolution / pooling / embedding
# ---------------------------------------------------------------------------


def conv3d(x: Tensor, w: Tensor, stride, padding=(0, 0, 0)) -> Tensor:
    """Strided 3D convolution, channels last.

    ``x``: [B, T, H, W, Cin]; ``w``: [kt, kh, kw, Cin, Cout]; symmetric zero
    padding per axis. Lowered to im2col + matmul so both backends accelerate it.
    """
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeMismatchError(f"conv3d expects 5-d input/weight, got {x.shape} and {w.shape}")
    if x.shape[-1] != w.shape[3]:
        raise ShapeMismatchError(f"conv3d: channel mismatch: input {x.shape} vs weight {w.shape}")
    st, sh, sw = (int(s) for s in stride)
    pt, ph, pw = (int(p) for p in padding)
    kt, kh, kw, cin, cout = w.shape

    xp = np.pad(x.data, ((0, 0), (pt, pt), (ph, ph), (pw, pw), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kt, kh, kw), axis=(1, 2, 3))
    win = win[:, ::st, ::sh, ::sw]  # [B, To, Ho, Wo, Cin, kt, kh, kw]
    b_, to, ho, wo = win.shape[:4]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 3, 5, 6, 7, 4)).reshape(-1, kt * kh * kw * cin)
    w2 = w.data.reshape(-1, cout)
    out = _mm(cols, w2).reshape(b_, to, ho, wo, cout)

    def bwd(g):
        g2 = g.reshape(-1, cout)
        gw = _mm(cols.T, g2).reshape(w.shape) if w.requires_grad else None
        if x.requires_grad:
            gcols = _mm(g2, w2.T).reshape(b_, to, ho, wo, kt, kh, kw, cin)
            gxp = np.zeros_like(xp)
            for i in range(kt):
                for j in range(kh):
                    for l in range(kw):
                        gxp[:, i : i + st * to : st, j : j + sh * ho : sh, l : l + sw * wo : sw] += gcols[
                            :, :, :, :, i, j, l
                        ]
            tdim, hdim, wdim = x.shape[1:4]
            gx = gxp[:, pt : pt + tdim, ph : ph + hdim, pw : pw + wdim]
            gx = np.ascontiguousarray(gx)
        else:
            gx = None
        return gx, gw

    return _record((x, w), out, bwd)


def avg_pool3d(x: Tensor, window) -> Tensor:
    """Non-overlapping average pooling over the T/H/W axes of [B,T,H,W,C]."""
    qt, qh, qw = (int(q) for q in window)
    b_, t, h, w_, c = x.shape
    if t % qt or h % qh or w_ % qw:
        raise ShapeMismatchError(f"avg_pool3d: window {window} does not divide {x.shape}")
    vol = qt * qh * qw
    r = x.data.reshape(b_, t // qt, qt, h // qh, qh, w_ // qw, qw, c)
    out = r.mean(axis=(2, 4, 6))

    def bwd(g):
        ge = g[:, :, None, :, None, :, None, :] / vol
        ge = np.broadcast_to(ge, (b_, t // qt, qt, h // qh, qh, w_ // qw, qw, c))
        return (np.ascontiguousarray(ge).reshape(x.shape),)

    return _record((x,), out, bwd)


def embedding(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup: out[...] = table[indices[...]]; scatter-add backward."""
    idx = np.asarray(indices)
    if idx.min(initial=0) < 0 or (idx.size and idx.max() >= table.shape[0]):
        raise ShapeMismatchError(
            f"embedding: index out of range for table with {table.shape[0]} rows"
        )
    out = table.data[idx]

    def bwd(g):
        gt = np.zeros(table.shape)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return _record((table,), out, bwd)


# ---------------------------------------------------------------------------
# Gradient oracle
# ---------------------------------------------------------------------------


def finite_diff_gradient(f, x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, element by element.

    Independent of the tape: ``f`` runs with recording disabled, so this is a
    valid oracle for :func:`backward`.
    """
    if h <= 0:
        raise ContractError(f"finite_diff_gradient: h must be positive, got {h}")
    base = x.data.copy()
    grad = np.zeros_like(base)
    flat_b, flat_g = base.reshape(-1), grad.reshape(-1)
    with no_grad():
        for i in range(flat_b.size):
            orig = flat_b[i]
            flat_b[i] = orig + h
            f_plus = _as_float(f(Tensor(base)))
            flat_b[i] = orig - h
            f_minus = _as_float(f(Tensor(base)))
            flat_b[i] = orig
            flat_g[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def _as_float(v) -> float:
    return v.item() if isinstance(v, Tensor) else float(v)
