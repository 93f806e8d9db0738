"""Dense-array math with tape-based reverse-mode differentiation.

The op set is the minimum needed by the renderer, field networks, and losses:
matmul, elementwise arithmetic, concat/reshape/narrow, reductions, abs,
square, sqrt, relu, clamp_min, sigmoid, softplus, exp, exclusive cumprod,
row gather (embedding lookup), and bilinear plane gather. There is no
general broadcasting: two shapes combine only when equal, when one operand
is a single scalar, when they share a rank and differ only in size-1 axes,
or in the bias pattern ``(C,) + (..., C)``. Anything else raises with both
shapes named.

Every op runs in plain numpy. When a :class:`Tape` is recording and an input
requires grad, the op appends a node holding a backward rule; nodes are
appended in execution order, so the list is already topologically sorted.
``Tape.backward`` walks it once in reverse, accumulating ``+=`` into
``Tensor.grad`` (repeated backward calls accumulate until ``zero_grads``).

Subgradient conventions: ``relu`` and ``abs`` use 0 at 0; ``clamp_min``
passes gradient only where the input strictly exceeds the floor.
"""

import os

import numpy as np

from . import kernels

_DEFAULT_DTYPE = np.float64
_DEBUG_CHECKS = os.environ.get("ROOMSDF_DEBUG_CHECKS", "").strip().lower() in {
    "1", "true", "yes", "on",
}


def set_default_dtype(dtype):
    """Set the float dtype new tensors default to (float64 or float32)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float64, np.float32):
        raise ValueError(f"unsupported default dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


def set_debug_checks(flag):
    """Toggle per-op NaN/Inf detection (raises FloatingPointError)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(flag)


class Tensor:
    """A dense float array plus optional gradient buffer."""

    __slots__ = ("values", "requires_grad", "grad")

    def __init__(self, values, requires_grad=False, dtype=None):
        self.values = np.asarray(values, dtype=dtype or _DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    @property
    def dtype(self):
        return self.values.dtype

    def item(self):
        return float(self.values.reshape(-1)[0])

    def ensure_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        return self.grad

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        else:
            self.grad.fill(0.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; constants are wrapped on the fly
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or _DEFAULT_DTYPE))


def _from_values(arr):
    """Wrap an op result without changing its dtype."""
    t = Tensor.__new__(Tensor)
    t.values = arr
    t.requires_grad = False
    t.grad = None
    return t


class _Node:
    __slots__ = ("name", "out", "backward")

    def __init__(self, name, out, backward):
        self.name = name
        self.out = out
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager around the forward pass, then call
    :meth:`backward` on a scalar loss. Recording is single-writer; forward
    evaluation with no active tape records nothing (the inference path).
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _push_tape(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _pop_tape(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, name, out, backward):
        self.nodes.append(_Node(name, out, backward))

    def backward(self, loss):
        """Populate ``grad`` on every requires-grad leaf of ``loss``.

        Intermediate grads are freed as soon as their producing node has
        been processed, so peak memory stays near the forward footprint.
        """
        if not isinstance(loss, Tensor):
            raise TypeError("backward expects a Tensor loss")
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ValueError("loss does not depend on any requires_grad tensor")
        loss.ensure_grad()
        loss.grad += np.ones_like(loss.values)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            node.backward(g)
            node.out.grad = None
        self.nodes.clear()


_TAPE_STACK = []


def _push_tape(tape):
    _TAPE_STACK.append(tape)


def _pop_tape(tape):
    if not _TAPE_STACK or _TAPE_STACK[-1] is not tape:
        raise RuntimeError("tape stack corrupted (exited out of order)")
    _TAPE_STACK.pop()


def active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(loss, tape):
    tape.backward(loss)


def _finite_check(name, arr):
    if _DEBUG_CHECKS and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by op '{name}'")


def _record(name, out, inputs, backward_fn):
    out.requires_grad = any(t.requires_grad for t in inputs)
    _finite_check(name, out.values)
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(name, out, backward_fn)
    return out


def _accum(tensor, contribution):
    """Accumulate a gradient the caller does NOT own (may be a view)."""
    if tensor.requires_grad:
        if tensor.grad is None:
            # first contribution: copy instead of zero-fill + add
            tensor.grad = np.array(contribution, dtype=tensor.dtype)
        else:
            tensor.grad += contribution


def _accum_new(tensor, contribution):
    """Accumulate a freshly allocated gradient; ownership transfers."""
    if tensor.requires_grad:
        if tensor.grad is None:
            tensor.grad = contribution
        else:
            tensor.grad += contribution


# -- shape rules -------------------------------------------------------------


def _check_binary_shapes(name, a, b):
    sa, sb = a.shape, b.shape
    if sa == sb or a.size == 1 or b.size == 1:
        return
    if len(sa) == len(sb) and all(
        da == db or da == 1 or db == 1 for da, db in zip(sa, sb)
    ):
        return
    if len(sa) == 1 and len(sb) >= 2 and sb[-1] == sa[0]:
        return  # bias: (C,) against (..., C)
    if len(sb) == 1 and len(sa) >= 2 and sa[-1] == sb[0]:
        return
    raise ValueError(f"{name}: incompatible shapes {sa} and {sb}")


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to ``shape`` by summation."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- arithmetic --------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_binary_shapes("add", a, b)
    out = _from_values(a.values + b.values)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _record("add", out, (a, b), bwd)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_binary_shapes("sub", a, b)
    out = _from_values(a.values - b.values)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _record("sub", out, (a, b), bwd)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_binary_shapes("mul", a, b)
    out = _from_values(a.values * b.values)
    av, bv = a.values, b.values

    def bwd(g):
        _accum_new(a, _unbroadcast(g * bv, a.shape))
        _accum_new(b, _unbroadcast(g * av, b.shape))

    return _record("mul", out, (a, b), bwd)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_binary_shapes("div", a, b)
    out = _from_values(a.values / b.values)
    av, bv = a.values, b.values

    def bwd(g):
        _accum_new(a, _unbroadcast(g / bv, a.shape))
        _accum_new(b, _unbroadcast(-g * av / (bv * bv), b.shape))

    return _record("div", out, (a, b), bwd)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = _from_values(a.values @ b.values)
    av, bv = a.values, b.values

    def bwd(g):
        _accum_new(a, g @ bv.T)
        _accum_new(b, av.T @ g)

    return _record("matmul", out, (a, b), bwd)


def linear(x, w, b):
    """Fused ``x @ w + b`` (bias shaped (out,)); one tape node."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"linear: incompatible shapes {x.shape} and {w.shape}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"linear: bias shape {b.shape} does not match "
                         f"output width {w.shape[1]}")
    out = _from_values(x.values @ w.values + b.values)
    xv, wv = x.values, w.values

    def bwd(g):
        _accum_new(x, g @ wv.T)
        _accum_new(w, xv.T @ g)
        _accum_new(b, g.sum(axis=0))

    return _record("linear", out, (x, w, b), bwd)


# -- shape ops ---------------------------------------------------------------


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    out = _from_values(np.concatenate([t.values for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _record("concat", out, tuple(tensors), bwd)


def reshape(a, shape):
    a = as_tensor(a)
    out = _from_values(a.values.reshape(shape))

    def bwd(g):
        _accum(a, g.reshape(a.shape))

    return _record("reshape", out, (a,), bwd)


def narrow(a, axis, start, length):
    """Slice ``length`` entries starting at ``start`` along ``axis``."""
    a = as_tensor(a)
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = _from_values(a.values[index].copy())

    def bwd(g):
        if a.requires_grad:
            a.ensure_grad()
            a.grad[index] += g

    return _record("narrow", out, (a,), bwd)


# -- reductions --------------------------------------------------------------


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = _from_values(a.values.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum_new(a, np.broadcast_to(g, a.shape).copy())

    return _record("sum", out, (a,), bwd)


def mean_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    out = _from_values(a.values.mean(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum_new(a, np.broadcast_to(g / count, a.shape).copy())

    return _record("mean", out, (a,), bwd)


# -- elementwise nonlinearities ----------------------------------------------


def abs_(a):
    a = as_tensor(a)
    out = _from_values(np.abs(a.values))
    sign = np.sign(a.values)  # sign(0) = 0: subgradient at 0 is 0

    def bwd(g):
        _accum_new(a, g * sign)

    return _record("abs", out, (a,), bwd)


def square(a):
    a = as_tensor(a)
    out = _from_values(a.values * a.values)
    av = a.values

    def bwd(g):
        _accum_new(a, g * (2.0 * av))

    return _record("square", out, (a,), bwd)


def sqrt_(a):
    """Elementwise square root; inputs must be strictly positive for a
    finite gradient (clamp first when zeros are possible)."""
    a = as_tensor(a)
    vals = np.sqrt(a.values)
    out = _from_values(vals)

    def bwd(g):
        _accum_new(a, g * (0.5 / vals))

    return _record("sqrt", out, (a,), bwd)


def relu(a):
    a = as_tensor(a)
    out = _from_values(np.maximum(a.values, 0.0))
    mask = a.values > 0.0  # subgradient at exactly 0 is defined as 0

    def bwd(g):
        _accum_new(a, g * mask)

    return _record("relu", out, (a,), bwd)


def clamp_min(a, floor):
    a = as_tensor(a)
    out = _from_values(np.maximum(a.values, floor))
    mask = a.values > floor  # gradient blocked once clamped

    def bwd(g):
        _accum_new(a, g * mask)

    return _record("clamp_min", out, (a,), bwd)


def _sigmoid_values(x):
    # branchless stable form: one exp of -|x|, then mirror for negatives
    e = np.exp(-np.abs(x))
    base = 1.0 / (1.0 + e)
    return np.where(x >= 0, base, 1.0 - base)


def sigmoid(a):
    a = as_tensor(a)
    vals = _sigmoid_values(a.values)
    out = _from_values(vals)

    def bwd(g):
        _accum_new(a, g * (vals * (1.0 - vals)))

    return _record("sigmoid", out, (a,), bwd)


def softplus(a, beta=1.0):
    """Numerically stable ``log(1 + exp(beta x)) / beta``."""
    a = as_tensor(a)
    bx = beta * a.values
    # log(1+e^b) = max(b, 0) + log(1+e^-|b|); shares the exp with the gradient
    e = np.exp(-np.abs(bx))
    vals = (np.maximum(bx, 0.0) + np.log1p(e)) / beta
    out = _from_values(vals)
    base = 1.0 / (1.0 + e)
    sig = np.where(bx >= 0, base, 1.0 - base)

    def bwd(g):
        _accum_new(a, g * sig)

    return _record("softplus", out, (a,), bwd)


def exp_(a):
    a = as_tensor(a)
    vals = np.exp(a.values)
    out = _from_values(vals)

    def bwd(g):
        _accum_new(a, g * vals)

    return _record("exp", out, (a,), bwd)


# -- structured ops ----------------------------------------------------------


def exclusive_cumprod(a, axis):
    """``y_i = prod_{j<i} x_j`` along ``axis`` (y_0 = 1).

    The backward scan is division-free, so zeros in the input are safe.
    """
    a = as_tensor(a)
    av = a.values
    n = av.shape[axis]
    y = np.ones_like(av)
    idx = [slice(None)] * av.ndim

    def at(i):
        ix = list(idx)
        ix[axis] = i
        return tuple(ix)

    for i in range(1, n):
        y[at(i)] = y[at(i - 1)] * av[at(i - 1)]
    out = _from_values(y.copy())

    def bwd(g):
        if not a.requires_grad:
            return
        # dL/dx_k = y_k * (g_{k+1} + x_{k+1} (g_{k+2} + x_{k+2} (...)))
        grad = np.zeros_like(av)
        s = np.zeros_like(g[at(n - 1)])
        for k in range(n - 2, -1, -1):
            s = g[at(k + 1)] + av[at(k + 1)] * s
            grad[at(k)] = y[at(k)] * s
        a.ensure_grad()
        a.grad += grad

    return _record("exclusive_cumprod", out, (a,), bwd)


def gather_rows(table, index):
    """Select rows of a 2D table by integer index; scatter-adds on backward."""
    table = as_tensor(table)
    index = np.asarray(index, dtype=np.int64)
    if table.ndim != 2:
        raise ValueError(f"gather_rows expects a 2D table, got {table.shape}")
    if index.min(initial=0) < 0 or index.max(initial=-1) >= table.shape[0]:
        raise IndexError(
            f"gather_rows: index out of range for table with {table.shape[0]} rows"
        )
    out = _from_values(table.values[index])

    def bwd(g):
        if table.requires_grad:
            table.ensure_grad()
            np.add.at(table.grad, index, g)

    return _record("gather_rows", out, (table,), bwd)


def plane_gather(plane, uv):
    """Bilinear lookup on an (N, N, C) plane at (P, 2) node-unit coords.

    Coordinates are clamped to the plane border. The backward pass deposits
    each upstream gradient onto the four corner cells with the bilinear
    weights (which sum to 1).
    """
    plane = as_tensor(plane)
    if plane.ndim != 3:
        raise ValueError(f"plane_gather expects (N, N, C), got {plane.shape}")
    n = plane.shape[0]
    uv = np.asarray(uv, dtype=plane.dtype)
    u = np.clip(uv[:, 0], 0.0, n - 1.0)
    v = np.clip(uv[:, 1], 0.0, n - 1.0)
    out = _from_values(kernels.plane_gather(plane.values, u, v))

    def bwd(g):
        if plane.requires_grad:
            plane.ensure_grad()
            kernels.plane_scatter(plane.grad, u, v, np.ascontiguousarray(g))

    return _record("plane_gather", out, (plane,), bwd)


# -- parameters ---------------------------------------------------------------


class ParamStore:
    """Named learnable tensors with persistent gradient buffers."""

    def __init__(self, dtype=None):
        self._params = {}
        self.dtype = np.dtype(dtype or default_dtype()).type

    def register(self, name, values):
        if name in self._params:
            raise KeyError(f"parameter '{name}' already registered")
        t = Tensor(values, requires_grad=True, dtype=self.dtype)
        t.ensure_grad()
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self):
        for t in self._params.values():
            t.zero_grad()


def zero_grads(store):
    store.zero_grads()
