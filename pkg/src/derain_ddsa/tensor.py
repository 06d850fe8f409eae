"""Reverse-mode automatic differentiation on dense float64 arrays.

The tape is explicit.  Arithmetic executed inside a ``with Tape():`` block is
recorded and can be differentiated once via :func:`backward`; arithmetic run
outside any tape, or under :func:`no_grad`, is plain numpy with no graph and
no overhead beyond the op itself.

Conventions:

* all tensor data is float64; leaves are C-contiguous, op outputs may be views
* gradients always have the same shape as the value they belong to
* elementwise ops require exactly matching shapes (no silent broadcasting);
  the only broadcasting op is batched ``matmul`` over leading axes
* masked-softmax positions are marked with the finite sentinel :data:`MASKED`
  rather than IEEE -inf, so "no non-finite values anywhere" stays checkable
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

# Finite stand-in for -infinity used to mask attention logits.  Kept finite so
# debug-mode finiteness checks remain meaningful; softmax_rows treats entries
# equal to this value as excluded and gives them exactly zero probability.
MASKED = -1.0e300


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class TapeError(RuntimeError):
    """Raised on tape misuse (double backward, missing recording, ...)."""


_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """Globally enable/disable finiteness assertions on activations and grads."""
    global _debug_checks
    _debug_checks = bool(enabled)


@contextmanager
def debug_checks(enabled: bool = True):
    """Temporarily toggle debug finiteness checks."""
    global _debug_checks
    saved = _debug_checks
    _debug_checks = bool(enabled)
    try:
        yield
    finally:
        _debug_checks = saved


def _assert_finite(arr: np.ndarray, what: str) -> None:
    if _debug_checks and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")


class Tensor:
    """A float64 array plus an optional gradient slot.

    ``requires_grad`` marks leaves (parameters / inputs under test) whose
    gradients should be accumulated by :func:`backward`.  Tensors produced by
    ops are read-only; leaves stay writable so optimizers can update them
    in place between tapes.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: "Tape | None" = None

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
        return float(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # A small set of operator sugar; everything maps onto the module-level ops.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, float(p))


class _Node:
    __slots__ = ("out", "inputs", "vjp", "name")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], vjp, name: str):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp
        self.name = name


_active_tape: "Tape | None" = None


class Tape:
    """Records ops in execution order for a single backward pass.

    Use as a context manager; nesting replaces the active tape for the inner
    block.  A tape can be consumed by :func:`backward` exactly once; call
    :meth:`reset` (or use a fresh tape) to differentiate again.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False
        self._outer: Tape | None = None

    def __enter__(self) -> "Tape":
        global _active_tape
        self._outer = _active_tape
        _active_tape = self
        return self

    def __exit__(self, *exc) -> None:
        global _active_tape
        _active_tape = self._outer
        self._outer = None

    def reset(self) -> None:
        self.nodes.clear()
        self.consumed = False


@contextmanager
def no_grad():
    """Disable recording inside the block even if a tape is active."""
    global _active_tape
    saved = _active_tape
    _active_tape = None
    try:
        yield
    finally:
        _active_tape = saved


def record_op(
    name: str,
    inputs: Sequence[Tensor],
    out_data: np.ndarray,
    vjp: Callable[[np.ndarray], tuple],
) -> Tensor:
    """Create the output tensor of an op, recording it on the active tape.

    ``vjp(grad_out)`` must return one gradient array (or None) per input, each
    shaped like the corresponding input.  Recording only happens when a tape
    is active and some input requires grad; otherwise the output is a plain
    constant tensor.
    """
    out_data = np.asarray(out_data, dtype=np.float64)
    _assert_finite(out_data, f"output of op '{name}'")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out._tape = None
    track = _active_tape is not None and any(t.requires_grad for t in inputs)
    out.requires_grad = track
    out.data.flags.writeable = False
    if track:
        out._tape = _active_tape
        _active_tape.nodes.append(_Node(out, tuple(inputs), vjp, name))
    return out


def backward(loss: Tensor, *, free_memory: bool = True) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every recorded tensor.

    ``loss`` must be a scalar recorded on a tape; the tape is walked once in
    reverse creation order and then marked consumed.

    By default the graph is torn down as the walk passes it: each op's saved
    closures, node links, and intermediate gradients are released once no
    later step needs them (the reversed walk guarantees a tensor's gradient
    is complete when its producing op is reached).  Leaf gradients are kept.
    Tape/node/tensor references otherwise form cycles that only the cyclic
    collector could reclaim, and at image scale the per-step garbage runs to
    hundreds of megabytes - far faster than collection triggers.  Pass
    ``free_memory=False`` to keep the graph for post-hoc inspection.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise TapeError("loss was not recorded on a tape (leaf or no_grad value)")
    if tape.consumed:
        raise TapeError("tape already differentiated; reset it or use a fresh tape")
    tape.consumed = True

    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        g_out = node.out.grad
        if g_out is None:
            continue
        grads = node.vjp(g_out)
        for t, g in zip(node.inputs, grads):
            if g is None or not t.requires_grad:
                continue
            if g.shape != t.data.shape:
                raise ShapeError(
                    f"vjp of '{node.name}' produced grad shape {g.shape} "
                    f"for input shape {t.data.shape}"
                )
            _assert_finite(g, f"gradient from op '{node.name}'")
            if t.grad is None:
                t.grad = g.copy() if g.base is not None else g
            else:
                t.grad = t.grad + g
        if free_memory:
            node.out.grad = None
            node.out = node.inputs = node.vjp = None
    if free_memory:
        tape.nodes.clear()


# ---------------------------------------------------------------------------
# elementwise and scalar ops
# ---------------------------------------------------------------------------


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: operand shapes differ, {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a + b (shapes must match exactly)."""
    _same_shape(a, b, "add")
    return record_op("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a - b (shapes must match exactly)."""
    _same_shape(a, b, "sub")
    return record_op("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a * b (shapes must match exactly)."""
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return record_op("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python float constant."""
    s = float(s)
    return record_op("scale", (a,), a.data * s, lambda g: (g * s,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    """Add a python float constant."""
    return record_op("add_scalar", (a,), a.data + float(c), lambda g: (g,))


def scale_by(a: Tensor, s: Tensor) -> Tensor:
    """Multiply a tensor by a scalar *tensor* (shape ()), e.g. a learned gain."""
    if s.size != 1:
        raise ShapeError(f"scale_by: gain must be scalar, got shape {s.shape}")
    ad, sd = a.data, s.data.item()

    def vjp(g):
        return g * sd, np.asarray(np.sum(g * ad)).reshape(s.data.shape)

    return record_op("scale_by", (a, s), ad * sd, vjp)


def power(a: Tensor, p: float) -> Tensor:
    """Elementwise a ** p for a float exponent."""
    p = float(p)
    ad = a.data
    return record_op("power", (a,), ad ** p, lambda g: (g * p * ad ** (p - 1.0),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record_op("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return record_op("log", (a,), np.log(ad), lambda g: (g / ad,))


def absolute(a: Tensor) -> Tensor:
    """Elementwise |a|; the gradient at 0 is taken as 0 (sign convention)."""
    ad = a.data
    return record_op("abs", (a,), np.abs(ad), lambda g: (g * np.sign(ad),))


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    """Permute axes; gradient applies the inverse permutation."""
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return record_op(
        "transpose", (a,), np.transpose(a.data, axes),
        lambda g: (np.transpose(g, inv),),
    )


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    in_shape = a.data.shape
    return record_op(
        "reshape", (a,), np.reshape(a.data, shape),
        lambda g: (np.reshape(g, in_shape),),
    )


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along ``axis``; gradient splits back at the same offsets."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def vjp(g):
        sl = [slice(None)] * g.ndim
        parts = []
        for i in range(len(sizes)):
            sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            parts.append(g[tuple(sl)])
        return tuple(parts)

    return record_op("concat", tuple(tensors), out, vjp)


def split(a: Tensor, sections: int, axis: int) -> list[Tensor]:
    """Split into ``sections`` equal parts along ``axis``.

    Each part is its own recorded op whose gradient scatters into a zero
    array of the input's shape; reverse-mode accumulation sums the parts.
    """
    n = a.data.shape[axis]
    if n % sections != 0:
        raise ShapeError(f"split: axis {axis} size {n} not divisible by {sections}")
    step = n // sections
    outs = []
    for i in range(sections):
        sl = [slice(None)] * a.data.ndim
        sl[axis] = slice(i * step, (i + 1) * step)
        sl = tuple(sl)

        def vjp(g, sl=sl):
            full = np.zeros_like(a.data)
            full[sl] = g
            return (full,)

        outs.append(record_op("split", (a,), a.data[sl], vjp))
    return outs


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _norm_axis(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def _expand_reduced(g: np.ndarray, shape, axes, keepdims) -> np.ndarray:
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.data.ndim)
    in_shape = a.data.shape
    out = np.sum(a.data, axis=axes, keepdims=keepdims)
    out = np.asarray(out)
    return record_op(
        "sum", (a,), out,
        lambda g: (_expand_reduced(g, in_shape, axes, keepdims).copy(),),
    )


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.data.ndim)
    in_shape = a.data.shape
    count = 1
    for ax in axes:
        count *= in_shape[ax]
    out = np.asarray(np.mean(a.data, axis=axes, keepdims=keepdims))
    return record_op(
        "mean", (a,), out,
        lambda g: (_expand_reduced(g / count, in_shape, axes, keepdims).copy(),),
    )


def reduce_max(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; at ties the gradient is split evenly among the maxima."""
    axes = _norm_axis(axis, a.data.ndim)
    in_shape = a.data.shape
    ad = a.data
    out = np.asarray(np.max(ad, axis=axes, keepdims=keepdims))

    def vjp(g):
        full_max = _expand_reduced(out, in_shape, axes, keepdims)
        mask = (ad == full_max).astype(np.float64)
        counts = np.sum(mask, axis=axes, keepdims=True)
        g_full = _expand_reduced(g, in_shape, axes, keepdims)
        return (g_full * mask / counts,)

    return record_op("max", (a,), out, vjp)


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` over broadcast leading/size-1 axes."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes (leading axes broadcast)."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul: operands must be >=2-D, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {ad.shape} vs {bd.shape}")
    out = np.matmul(ad, bd)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return record_op("matmul", (a, b), out, vjp)


# ---------------------------------------------------------------------------
# softmax with masking sentinel
# ---------------------------------------------------------------------------


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last axis, honouring the :data:`MASKED` sentinel.

    Entries exactly equal to ``MASKED`` receive probability exactly 0.0 and no
    gradient; remaining entries are max-shifted for stability.  A row with
    every entry masked is an error.
    """
    ad = a.data
    masked = ad == MASKED
    if masked.any() and bool(np.any(np.all(masked, axis=-1))):
        raise ValueError("softmax_rows: a row is fully masked")
    neg_inf = np.where(masked, -np.inf, ad)
    shifted = neg_inf - np.max(neg_inf, axis=-1, keepdims=True)
    e = np.where(masked, 0.0, np.exp(shifted))
    denom = np.sum(e, axis=-1, keepdims=True)
    out = e / denom

    def vjp(g):
        inner = np.sum(g * out, axis=-1, keepdims=True)
        return (out * (g - inner),)

    return record_op("softmax_rows", (a,), out, vjp)
