"""Tape-based reverse-mode automatic differentiation over dense float64 tensors.

A :class:`Tape` records every operation as a node holding the parent ids and a
backward closure; :meth:`Tape.backward` visits the nodes in strictly
decreasing id order exactly once, so the creation order doubles as the
topological order. The engine is sized for differentiating losses through
unrolled ODE solves and small neural controllers: dense tensors, first-order
gradients, no broadcasting beyond scalar-with-tensor.

Tensors are plain ``numpy`` float64 arrays. With ``Tape(record=False)`` the
same ops run without building the graph, which guarantees bitwise-identical
values between differentiable and plain evaluation.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

Array = np.ndarray

ELEMENTWISE_KINDS = (
    "add", "sub", "mul", "neg", "square", "sqrt", "sin", "cos", "exp",
    "relu", "elu",
)
REDUCE_KINDS = ("sum", "mean", "min", "max", "axis-mean")


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible for the requested operation."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")


def _f64(value) -> Array:
    return np.asarray(value, dtype=np.float64)


class Var:
    """A tensor value bound to a tape node.

    ``id`` is -1 on non-recording tapes; ids on a recording tape strictly
    increase in creation order.
    """

    __slots__ = ("tape", "id", "value")

    def __init__(self, tape: "Tape", node_id: int, value: Array):
        self.tape = tape
        self.id = node_id
        self.value = value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def __repr__(self) -> str:
        return f"Var(id={self.id}, shape={self.shape})"

    # Operator sugar; anything fancier goes through the module functions.
    def __add__(self, other):
        return add(self, other) if isinstance(other, Var) else add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Var) else add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Var) else scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise TypeError("division by a Var is not supported; divide by a float")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return neg(self)


class _Node:
    __slots__ = ("parents", "backward")

    def __init__(self, parents: tuple[int, ...], backward: Callable[[Array], tuple[Array, ...]]):
        self.parents = parents
        self.backward = backward


class Gradients:
    """Gradient map node id -> tensor, produced by :meth:`Tape.backward`."""

    def __init__(self, buffer: list[Array | None], tape: "Tape"):
        self._buffer = buffer
        self._tape = tape

    def __getitem__(self, node_id: int) -> Array:
        g = self._buffer[node_id]
        if g is None:
            return np.zeros(self._tape._shapes[node_id])
        return g

    def wrt(self, var: Var) -> Array:
        """Gradient of the loss with respect to ``var`` (zeros if unreachable)."""
        if var.tape is not self._tape or var.id < 0:
            raise ValueError("var does not belong to the tape that produced these gradients")
        return self[var.id]


class Tape:
    """Single-writer op recorder; one tape per solve/worker.

    Not thread-safe: concurrent recording requires one Tape per worker.
    Values (numpy arrays) are never mutated after creation and may be
    shared read-only.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self._nodes: list[_Node] = []
        self._shapes: list[tuple[int, ...]] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def __bool__(self) -> bool:
        return True  # an empty tape is still a tape

    def leaf(self, value) -> Var:
        """Record an input tensor (parameter or constant) as a parentless node."""
        return self._emit(_f64(value), (), None)

    def _emit(self, value: Array, parents: tuple[int, ...],
              backward: Callable[[Array], tuple[Array, ...]] | None) -> Var:
        if not self.record:
            return Var(self, -1, value)
        node_id = len(self._nodes)
        self._nodes.append(_Node(parents, backward))
        self._shapes.append(value.shape)
        return Var(self, node_id, value)

    def backward(self, loss: Var) -> Gradients:
        """Accumulate d(loss)/d(node) for every node reachable from ``loss``.

        ``loss`` must be a scalar. Unreachable nodes report zero gradients.
        """
        if not self.record:
            raise RuntimeError("cannot run backward on a non-recording tape")
        if loss.tape is not self or loss.id < 0:
            raise ValueError("loss does not belong to this tape")
        if loss.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        buffer: list[Array | None] = [None] * len(self._nodes)
        buffer[loss.id] = np.ones(self._shapes[loss.id])
        for node_id in range(loss.id, -1, -1):
            grad = buffer[node_id]
            if grad is None:
                continue
            node = self._nodes[node_id]
            if node.backward is None:
                continue
            for parent_id, parent_grad in zip(node.parents, node.backward(grad)):
                if buffer[parent_id] is None:
                    buffer[parent_id] = parent_grad.copy()
                else:
                    buffer[parent_id] += parent_grad
        return Gradients(buffer, self)


def _same_tape(*vars_: Var) -> Tape:
    tape = vars_[0].tape
    for v in vars_[1:]:
        if v.tape is not tape:
            raise ValueError("operands live on different tapes")
    return tape


def _binary_shapes(op: str, a: Var, b: Var) -> None:
    # Scalar-with-tensor is the only permitted broadcast.
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeMismatch(op, a.shape, b.shape)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    if shape == () and grad.shape != ():
        return np.asarray(grad.sum())
    return grad


# ---------------------------------------------------------------------------
# elementwise ops

def add(a: Var, b: Var) -> Var:
    _binary_shapes("add", a, b)
    tape = _same_tape(a, b)
    sa, sb = a.shape, b.shape
    return tape._emit(a.value + b.value, (a.id, b.id),
                      lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Var, b: Var) -> Var:
    _binary_shapes("sub", a, b)
    tape = _same_tape(a, b)
    sa, sb = a.shape, b.shape
    return tape._emit(a.value - b.value, (a.id, b.id),
                      lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a: Var, b: Var) -> Var:
    _binary_shapes("mul", a, b)
    tape = _same_tape(a, b)
    av, bv, sa, sb = a.value, b.value, a.shape, b.shape
    return tape._emit(av * bv, (a.id, b.id),
                      lambda g: (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb)))


def scale(a: Var, c: float) -> Var:
    """Multiply by a Python float without recording a second operand."""
    c = float(c)
    return a.tape._emit(a.value * c, (a.id,), lambda g: (g * c,))


def add_scalar(a: Var, c: float) -> Var:
    c = float(c)
    return a.tape._emit(a.value + c, (a.id,), lambda g: (g,))


def neg(a: Var) -> Var:
    return a.tape._emit(-a.value, (a.id,), lambda g: (-g,))


def square(a: Var) -> Var:
    av = a.value
    return a.tape._emit(av * av, (a.id,), lambda g: (g * 2.0 * av,))


def sqrt(a: Var) -> Var:
    out = np.sqrt(a.value)
    return a.tape._emit(out, (a.id,), lambda g: (g * 0.5 / out,))


def sin(a: Var) -> Var:
    av = a.value
    return a.tape._emit(np.sin(av), (a.id,), lambda g: (g * np.cos(av),))


def cos(a: Var) -> Var:
    av = a.value
    return a.tape._emit(np.cos(av), (a.id,), lambda g: (-g * np.sin(av),))


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return a.tape._emit(out, (a.id,), lambda g: (g * out,))


def relu(a: Var) -> Var:
    av = a.value
    return a.tape._emit(np.maximum(av, 0.0), (a.id,), lambda g: (g * (av > 0.0),))


def elu(a: Var) -> Var:
    """Exponential linear unit with alpha fixed to 1."""
    av = a.value
    out = np.where(av > 0.0, av, np.expm1(av))
    return a.tape._emit(out, (a.id,),
                        lambda g: (g * np.where(av > 0.0, 1.0, np.exp(av)),))


_UNARY = {"neg": neg, "square": square, "sqrt": sqrt, "sin": sin, "cos": cos,
          "exp": exp, "relu": relu, "elu": elu}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(kind: str, a: Var, b: Var | None = None) -> Var:
    """Dispatch an elementwise op by kind name."""
    if kind in _UNARY:
        if b is not None:
            raise TypeError(f"{kind} is unary")
        return _UNARY[kind](a)
    if kind in _BINARY:
        if b is None:
            raise TypeError(f"{kind} is binary")
        return _BINARY[kind](a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# matmul

def matmul(a: Var, b: Var) -> Var:
    """Matrix product for 2-D @ 2-D, 2-D @ 1-D and 1-D @ 2-D operands."""
    tape = _same_tape(a, b)
    av, bv = a.value, b.value
    if av.ndim == 2 and bv.ndim == 2:
        if av.shape[1] != bv.shape[0]:
            raise ShapeMismatch("matmul", av.shape, bv.shape)
        return tape._emit(av @ bv, (a.id, b.id),
                          lambda g: (g @ bv.T, av.T @ g))
    if av.ndim == 2 and bv.ndim == 1:
        if av.shape[1] != bv.shape[0]:
            raise ShapeMismatch("matmul", av.shape, bv.shape)
        return tape._emit(av @ bv, (a.id, b.id),
                          lambda g: (np.outer(g, bv), av.T @ g))
    if av.ndim == 1 and bv.ndim == 2:
        if av.shape[0] != bv.shape[0]:
            raise ShapeMismatch("matmul", av.shape, bv.shape)
        return tape._emit(av @ bv, (a.id, b.id),
                          lambda g: (bv @ g, np.outer(av, g)))
    raise ShapeMismatch("matmul", av.shape, bv.shape)


# ---------------------------------------------------------------------------
# reductions

def _require_nonempty(op: str, a: Var) -> None:
    if a.size == 0:
        raise ValueError(f"{op}: empty tensor")


def reduce_sum(a: Var) -> Var:
    _require_nonempty("sum", a)
    shape = a.shape
    return a.tape._emit(np.asarray(a.value.sum()), (a.id,),
                        lambda g: (np.broadcast_to(g, shape).copy(),))


def reduce_mean(a: Var) -> Var:
    _require_nonempty("mean", a)
    shape, n = a.shape, a.size
    return a.tape._emit(np.asarray(a.value.mean()), (a.id,),
                        lambda g: (np.broadcast_to(g / n, shape).copy(),))


def _extremum(a: Var, argfn) -> Var:
    # Gradient routes to the first attaining index in row-major order.
    flat_idx = argfn(a.value)
    out = np.asarray(a.value.reshape(-1)[flat_idx])
    shape = a.shape

    def backward(g: Array) -> tuple[Array]:
        grad = np.zeros(shape)
        grad.reshape(-1)[flat_idx] = g
        return (grad,)

    return a.tape._emit(out, (a.id,), backward)


def reduce_min(a: Var) -> Var:
    _require_nonempty("min", a)
    return _extremum(a, np.argmin)


def reduce_max(a: Var) -> Var:
    _require_nonempty("max", a)
    return _extremum(a, np.argmax)


def axis_mean(a: Var, axis: int) -> Var:
    _require_nonempty("axis-mean", a)
    n = a.shape[axis]

    def backward(g: Array) -> tuple[Array]:
        return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return a.tape._emit(a.value.mean(axis=axis), (a.id,), backward)


def reduce(kind: str, a: Var, axis: int | None = None) -> Var:
    """Dispatch a reduction by kind name."""
    if kind == "axis-mean":
        if axis is None:
            raise TypeError("axis-mean requires an axis")
        return axis_mean(a, axis)
    if axis is not None:
        raise TypeError(f"{kind} reduces the full tensor; axis not accepted")
    try:
        return {"sum": reduce_sum, "mean": reduce_mean,
                "min": reduce_min, "max": reduce_max}[kind](a)
    except KeyError:
        raise ValueError(f"unknown reduce kind {kind!r}") from None


# ---------------------------------------------------------------------------
# softmax

def softmax(a: Var) -> Var:
    """Stable softmax of a 1-D tensor (max-subtraction before exponentiation)."""
    if a.value.ndim != 1:
        raise ShapeMismatch("softmax", a.shape)
    _require_nonempty("softmax", a)
    shifted = a.value - a.value.max()
    e = np.exp(shifted)
    out = e / e.sum()

    def backward(g: Array) -> tuple[Array]:
        return (out * (g - float(g @ out)),)

    return a.tape._emit(out, (a.id,), backward)


# ---------------------------------------------------------------------------
# structural ops (reshape / gather / concat / stack)

def reshape(a: Var, shape: Sequence[int]) -> Var:
    shape = tuple(shape)
    old = a.shape
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeMismatch("reshape", old, shape)
    return a.tape._emit(a.value.reshape(shape), (a.id,),
                        lambda g: (g.reshape(old),))


def gather(a: Var, indices, axis: int = 0) -> Var:
    """Select ``indices`` along ``axis``; duplicate indices accumulate gradients."""
    idx = np.asarray(indices, dtype=np.intp)
    out = np.take(a.value, idx, axis=axis)
    shape = a.shape

    def backward(g: Array) -> tuple[Array]:
        grad = np.zeros(shape)
        moved = np.moveaxis(grad, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (grad,)

    return a.tape._emit(out, (a.id,), backward)


def concat(parts: Sequence[Var], axis: int = 0) -> Var:
    if not parts:
        raise ValueError("concat: empty sequence")
    tape = _same_tape(*parts)
    values = [p.value for p in parts]
    out = np.concatenate(values, axis=axis)
    extents = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + extents)

    def backward(g: Array) -> tuple[Array, ...]:
        moved = np.moveaxis(g, axis, 0)
        return tuple(np.moveaxis(moved[offsets[i]:offsets[i + 1]].copy(), 0, axis)
                     for i in range(len(parts)))

    return tape._emit(out, tuple(p.id for p in parts), backward)


def stack_scalars(parts: Sequence[Var]) -> Var:
    """Pack scalar Vars into a 1-D tensor (for reductions over time samples)."""
    if not parts:
        raise ValueError("stack: empty sequence")
    tape = _same_tape(*parts)
    for p in parts:
        if p.size != 1:
            raise ShapeMismatch("stack", p.shape)
    out = np.array([float(p.value) for p in parts])

    def backward(g: Array) -> tuple[Array, ...]:
        return tuple(np.asarray(g[i]) for i in range(len(parts)))

    return tape._emit(out, tuple(p.id for p in parts), backward)


# ---------------------------------------------------------------------------
# constant-operand forms: the fixed side (adjacency, driver matrix, rate
# vectors) stays a plain array and never occupies a tape node.

def const_matmul(a_const: Array, b: Var) -> Var:
    a_const = _f64(a_const)
    if a_const.ndim != 2 or b.value.ndim not in (1, 2) or a_const.shape[1] != b.shape[0]:
        raise ShapeMismatch("const_matmul", a_const.shape, b.shape)
    return b.tape._emit(a_const @ b.value, (b.id,), lambda g: (a_const.T @ g,))


def matmul_const(a: Var, b_const: Array) -> Var:
    b_const = _f64(b_const)
    if b_const.ndim != 2 or a.value.ndim not in (1, 2) or a.shape[-1] != b_const.shape[0]:
        raise ShapeMismatch("matmul_const", a.shape, b_const.shape)
    return a.tape._emit(a.value @ b_const, (a.id,), lambda g: (g @ b_const.T,))


def const_mul(c: Array, a: Var) -> Var:
    c = _f64(c)
    if c.shape != a.shape and c.shape != ():
        raise ShapeMismatch("const_mul", c.shape, a.shape)
    return a.tape._emit(c * a.value, (a.id,), lambda g: (g * c,))


def const_add(c: Array, a: Var) -> Var:
    c = _f64(c)
    if c.shape != a.shape and c.shape != ():
        raise ShapeMismatch("const_add", c.shape, a.shape)
    return a.tape._emit(c + a.value, (a.id,), lambda g: (g,))


def assert_finite(a: Var, context: str = "") -> None:
    """Explicit NaN/Inf check (finiteness is not verified per-op)."""
    if not np.all(np.isfinite(a.value)):
        raise FloatingPointError(f"non-finite values{' in ' + context if context else ''}")
