"""Reverse-mode automatic differentiation on dense float64 tensors.

A small tape-based engine: operations executed while a :class:`Tape` is
active append a backward rule, and ``tape.backward(loss)`` replays the
rules in reverse execution order (which is a valid topological order for
a define-by-run graph).  Everything is float64; gradients of tensors the
loss never reached are zero.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Sequence

import numpy as np

PROB_EPS = 1e-7  # clamp for log() in binary cross-entropy

_node_ids = itertools.count()
_local = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class Tensor:
    """A dense float64 array plus a node id used by the gradient tape."""

    __slots__ = ("data", "node_id", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.node_id = next(_node_ids)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A constant copy carrying no gradient history."""
        return Tensor(self.data.copy())

    def check_finite(self) -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError("tensor contains non-finite entries")
        return self

    def __repr__(self):
        return f"Tensor(shape={self.shape}, id={self.node_id})"

    # operator sugar; all arithmetic routes through the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(data, requires_grad=True)


class Tape:
    """Ordered record of operations for one reverse-mode pass.

    Use as a context manager; ops executed inside record themselves when
    any input is trainable (or derived from one on this tape).  A tape is
    single-threaded and single-use: ``backward`` may run once.
    """

    def __init__(self):
        self._entries: list[tuple[int, tuple[Tensor, ...], Callable]] = []
        self._on_tape: set[int] = set()
        self._grads: dict[int, np.ndarray] = {}
        self._used = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def _tracks(self, t: Tensor) -> bool:
        return t.requires_grad or t.node_id in self._on_tape

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self._entries.append((out.node_id, inputs, backward))
        self._on_tape.add(out.node_id)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(node) for every node reachable from *loss*."""
        if self._used:
            raise RuntimeError("backward() already ran on this tape")
        self._used = True
        if loss.data.size != 1:
            raise DimensionError(f"loss must be scalar, got shape {loss.shape}")
        self._grads[loss.node_id] = np.ones_like(loss.data)
        for out_id, inputs, backward in reversed(self._entries):
            g = self._grads.get(out_id)
            if g is None:
                continue  # not reachable from the loss
            for t, gi in zip(inputs, backward(g)):
                if gi is None or not self._tracks(t):
                    continue
                acc = self._grads.get(t.node_id)
                if acc is None:
                    # private copy: backward rules may hand back views of (or
                    # the very object) g, which must stay untouched
                    self._grads[t.node_id] = np.array(gi)
                else:
                    acc += gi
        self._entries.clear()

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient of the loss w.r.t. *t*; zeros if the loss never reached it."""
        g = self._grads.get(t.node_id)
        return np.zeros_like(t.data) if g is None else g


def _active_tape(*inputs: Tensor) -> Tape | None:
    stack = _tape_stack()
    if not stack:
        return None
    tape = stack[-1]
    return tape if any(tape._tracks(t) for t in inputs) else None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum *grad* over the axes numpy broadcasting expanded to reach it."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / broadcasting arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data + b.data)
    except ValueError as err:
        raise DimensionError(f"add: {a.shape} vs {b.shape}") from err
    tape = _active_tape(a, b)
    if tape:
        tape._record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data - b.data)
    except ValueError as err:
        raise DimensionError(f"sub: {a.shape} vs {b.shape}") from err
    tape = _active_tape(a, b)
    if tape:
        tape._record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data * b.data)
    except ValueError as err:
        raise DimensionError(f"mul: {a.shape} vs {b.shape}") from err
    tape = _active_tape(a, b)
    if tape:
        ad, bd = a.data, b.data
        tape._record(
            out, (a, b),
            lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)),
        )
    return out


def scale(x, c: float) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data * c)
    tape = _active_tape(x)
    if tape:
        tape._record(out, (x,), lambda g: (g * c,))
    return out


def matmul(a, b) -> Tensor:
    """Matrix product with numpy 1-D/2-D semantics."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise DimensionError(f"matmul supports 1-D/2-D operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise DimensionError(f"matmul: inner dimensions disagree, {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    tape = _active_tape(a, b)
    if tape:
        ad, bd = a.data, b.data

        def backward(g):
            if ad.ndim == 1 and bd.ndim == 1:  # scalar out
                return g * bd, g * ad
            if ad.ndim == 1:  # (n,) out
                return g @ bd.T, np.outer(ad, g)
            if bd.ndim == 1:  # (m,) out
                return np.outer(g, bd), ad.T @ g
            return g @ bd.T, ad.T @ g

        tape._record(out, (a, b), backward)
    return out


def affine(x, w, b) -> Tensor:
    """x @ w + b with the bias broadcast over leading axes."""
    return add(matmul(x, w), b)


# ---------------------------------------------------------------------------
# nonlinearities (each 1-Lipschitz)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0))
    tape = _active_tape(x)
    if tape:
        mask = x.data > 0.0
        tape._record(out, (x,), lambda g: (g * mask,))
    return out


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.tanh(x.data))
    tape = _active_tape(x)
    if tape:
        od = out.data
        tape._record(out, (x,), lambda g: (g * (1.0 - od * od),))
    return out


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    # stable logistic: exp of a non-positive argument on both branches
    d = x.data
    out_data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                        np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Tensor(out_data)
    tape = _active_tape(x)
    if tape:
        od = out.data
        tape._record(out, (x,), lambda g: (g * od * (1.0 - od),))
    return out


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    try:
        out = Tensor(x.data.reshape(shape))
    except ValueError as err:
        raise DimensionError(f"reshape {x.shape} -> {shape}") from err
    tape = _active_tape(x)
    if tape:
        orig = x.data.shape
        tape._record(out, (x,), lambda g: (g.reshape(orig),))
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    parts = [_as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=-1))
    tape = _active_tape(*parts)
    if tape:
        widths = [p.data.shape[-1] for p in parts]
        bounds = np.cumsum([0] + widths)

        def backward(g):
            return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(parts)))

        tape._record(out, tuple(parts), backward)
    return out


def take_cols(x, start: int, stop: int) -> Tensor:
    """Slice [start, stop) of the last axis."""
    x = _as_tensor(x)
    out = Tensor(x.data[..., start:stop])
    tape = _active_tape(x)
    if tape:
        shape = x.data.shape

        def backward(g):
            full = np.zeros(shape)
            full[..., start:stop] = g
            return (full,)

        tape._record(out, (x,), backward)
    return out


def channel_matvec(field: Tensor, control: np.ndarray) -> Tensor:
    """Batched matrix-vector product (B,H,C) x (B,C) -> (B,H).

    *control* is observed data (the control path's derivative), never a
    trainable quantity, so no gradient flows into it.
    """
    field = _as_tensor(field)
    ctrl = np.asarray(control, dtype=np.float64)
    if field.data.ndim != 3 or ctrl.ndim != 2 or field.data.shape[::2] != ctrl.shape:
        raise DimensionError(f"channel_matvec: {field.shape} x {ctrl.shape}")
    out = Tensor(np.einsum("bhc,bc->bh", field.data, ctrl))
    tape = _active_tape(field)
    if tape:
        tape._record(out, (field,), lambda g: (np.einsum("bh,bc->bhc", g, ctrl),))
    return out


# ---------------------------------------------------------------------------
# reductions and losses


def sum_all(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data.sum())
    tape = _active_tape(x)
    if tape:
        shape = x.data.shape
        tape._record(out, (x,), lambda g: (np.broadcast_to(g, shape),))
    return out


def mean_all(x) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size
    out = Tensor(x.data.mean())
    tape = _active_tape(x)
    if tape:
        shape = x.data.shape
        tape._record(out, (x,), lambda g: (np.broadcast_to(g / n, shape),))
    return out


def bce(target, prob) -> Tensor:
    """Elementwise binary cross-entropy with soft targets.

    Predictions are clamped to [PROB_EPS, 1 - PROB_EPS] before the logs, so
    the result is finite for any input; targets may lie anywhere in [0, 1]
    and receive no gradient.
    """
    prob = _as_tensor(prob)
    t = np.asarray(target, dtype=np.float64)
    q = np.clip(prob.data, PROB_EPS, 1.0 - PROB_EPS)
    out = Tensor(-(t * np.log(q) + (1.0 - t) * np.log1p(-q)))
    tape = _active_tape(prob)
    if tape:
        inside = (prob.data > PROB_EPS) & (prob.data < 1.0 - PROB_EPS)

        def backward(g):
            return (g * inside * (q - t) / (q * (1.0 - q)),)

        tape._record(out, (prob,), backward)
    return out


def bce_scalar(target: float, prob: float) -> float:
    """Plain-number convenience for single probabilities."""
    return float(bce(target, Tensor(prob)).data)
