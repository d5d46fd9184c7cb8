"""Dense-matrix reverse-mode differentiation on an explicit tape.

Every value is a 2-D float64 numpy array. Scalars are 1x1 matrices.
Vector-Jacobian rules are written in terms of the same primitives, so a
backward pass can itself be recorded (``create_graph=True``) and
differentiated again. That is what makes gradients through an inner SGD
step exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

LOG_FLOOR = 1e-300


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def as_matrix(x) -> np.ndarray:
    """Coerce ``x`` to a finite 2-D float64 array (scalars become 1x1)."""
    a = np.array(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise NonFiniteError("matrix contains NaN or Inf")
    return a


class Node:
    __slots__ = ("tape", "value", "op", "parents", "attrs", "requires_grad", "index")

    def __init__(self, tape, value, op, parents=(), attrs=None, requires_grad=False):
        self.tape = tape
        self.value = value
        self.op = op
        self.parents = parents
        self.attrs = attrs
        self.requires_grad = requires_grad
        self.index = -1

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def T(self) -> "Node":
        return transpose(self)

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 node, got {self.value.shape}")
        return float(self.value[0, 0])

    def _lift(self, other) -> "Node":
        if isinstance(other, Node):
            return other
        return self.tape.const(other)

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, float(other))
        return add(self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, -float(other))
        return sub(self, self._lift(other))

    def __rsub__(self, other):
        if isinstance(other, (int, float)):
            return shift(neg(self), float(other))
        return sub(self._lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, self._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, self._lift(other))

    def __rtruediv__(self, other):
        return div(self._lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, self._lift(other))

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.shape}, index={self.index})"


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended at creation, so tape order is a topological order.
    ``params`` lists the differentiable leaves in registration order.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: list[Node] = []
        self.recording = True

    def _append(self, node: Node) -> Node:
        if self.recording:
            node.index = len(self.nodes)
            self.nodes.append(node)
        else:
            # unrecorded nodes are plain values for a first-order backward
            node.parents = ()
            node.requires_grad = False
        return node

    def const(self, value) -> Node:
        return self._append(Node(self, as_matrix(value), "const"))

    def param(self, value) -> Node:
        node = self._append(Node(self, as_matrix(value), "param", requires_grad=True))
        self.params.append(node)
        return node

    def replay(self, feed: dict[Node, np.ndarray] | None = None) -> list[np.ndarray]:
        """Recompute every recorded value, optionally overriding leaves.

        Returns the list of values in tape order; the tape itself is left
        untouched.
        """
        feed = feed or {}
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.op in ("const", "param"):
                v = feed.get(node, node.value)
                values.append(as_matrix(v) if node in feed else v)
                continue
            args = [values[p.index] for p in node.parents]
            values.append(_OPS[node.op].forward(args, node.attrs))
        return values


# --------------------------------------------------------------------------
# primitive registry


@dataclass(frozen=True)
class _Op:
    forward: Callable
    vjp: Callable  # (g, out, parents, attrs) -> sequence of Node | None


_OPS: dict[str, _Op] = {}


def _apply(name: str, parents: Sequence[Node], attrs=None) -> Node:
    tape = parents[0].tape
    with np.errstate(over="ignore", invalid="ignore"):
        out = _OPS[name].forward([p.value for p in parents], attrs)
    # one reduction is cheaper than an elementwise mask; only overflow of the
    # sum itself needs the exact check
    if not math.isfinite(out.sum()) and not np.isfinite(out).all():
        raise NonFiniteError(f"{name} produced a non-finite value")
    rg = tape.recording and any(p.requires_grad for p in parents)
    return tape._append(Node(tape, out, name, tuple(parents), attrs, rg))


def _broadcast_shape(a, b, name):
    if a == b:
        return a
    out = []
    for x, y in zip(a, b):
        if x != y and x != 1 and y != 1:
            raise ShapeError(f"{name}: shapes {a} and {b} do not conform")
        out.append(max(x, y))
    return tuple(out)


def _register(name, forward, vjp):
    _OPS[name] = _Op(forward, vjp)


def _unbroadcast(g: Node, shape) -> Node:
    if g.shape == shape:
        return g
    return sum_to(g, shape)


# elementwise binary ops (broadcasting over rows / columns / scalars)

_register(
    "add",
    lambda v, a: v[0] + v[1],
    lambda g, out, p, a: (_unbroadcast(g, p[0].shape), _unbroadcast(g, p[1].shape)),
)
_register(
    "sub",
    lambda v, a: v[0] - v[1],
    lambda g, out, p, a: (_unbroadcast(g, p[0].shape), _unbroadcast(neg(g), p[1].shape)),
)
_register(
    "mul",
    lambda v, a: v[0] * v[1],
    lambda g, out, p, a: (_unbroadcast(mul(g, p[1]), p[0].shape),
                          _unbroadcast(mul(g, p[0]), p[1].shape)),
)
_register(
    "div",
    lambda v, a: v[0] / v[1],
    lambda g, out, p, a: (_unbroadcast(div(g, p[1]), p[0].shape),
                          _unbroadcast(neg(mul(g, div(out, p[1]))), p[1].shape)),
)


def _binary(name):
    def fn(a: Node, b: Node) -> Node:
        _broadcast_shape(a.shape, b.shape, name)
        return _apply(name, (a, b))
    fn.__name__ = name
    return fn


add = _binary("add")
sub = _binary("sub")
mul = _binary("mul")
div = _binary("div")

_register("neg", lambda v, a: -v[0], lambda g, out, p, a: (neg(g),))
_register("scale", lambda v, a: v[0] * a, lambda g, out, p, a: (scale(g, a),))
_register("shift", lambda v, a: v[0] + a, lambda g, out, p, a: (g,))


def neg(a: Node) -> Node:
    return _apply("neg", (a,))


def scale(a: Node, c: float) -> Node:
    return _apply("scale", (a,), float(c))


def shift(a: Node, c: float) -> Node:
    return _apply("shift", (a,), float(c))


# linear algebra

_register("matmul", lambda v, a: v[0] @ v[1],
          lambda g, out, p, a: (matmul(g, transpose(p[1])), matmul(transpose(p[0]), g)))
_register("transpose", lambda v, a: np.ascontiguousarray(v[0].T),
          lambda g, out, p, a: (transpose(g),))


def matmul(a: Node, b: Node) -> Node:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    return _apply("matmul", (a, b))


def transpose(a: Node) -> Node:
    return _apply("transpose", (a,))


# reductions and broadcasting


def _sum_to_fwd(v, shape):
    x = v[0]
    if shape == (1, 1):
        return np.array([[x.sum()]])
    if shape[0] == 1 and x.shape[0] != 1:
        x = x.sum(axis=0, keepdims=True)
    if shape[1] == 1 and x.shape[1] != 1:
        x = x.sum(axis=1, keepdims=True)
    return x


_register("sum_to", _sum_to_fwd, lambda g, out, p, a: (broadcast_to(g, p[0].shape),))
_register("broadcast_to", lambda v, a: np.broadcast_to(v[0], a).copy(),
          lambda g, out, p, a: (sum_to(g, p[0].shape),))


def sum_to(a: Node, shape) -> Node:
    shape = tuple(shape)
    for have, want in zip(a.shape, shape):
        if want not in (1, have):
            raise ShapeError(f"sum_to: cannot reduce {a.shape} to {shape}")
    return _apply("sum_to", (a,), shape)


def broadcast_to(a: Node, shape) -> Node:
    shape = tuple(shape)
    _broadcast_shape(a.shape, shape, "broadcast_to")
    return _apply("broadcast_to", (a,), shape)


def total(a: Node) -> Node:
    """Sum of all entries as a 1x1 node."""
    return sum_to(a, (1, 1))


def row_sum(a: Node) -> Node:
    """Per-row sums, k x 1."""
    return sum_to(a, (a.shape[0], 1))


def mean(a: Node) -> Node:
    return scale(total(a), 1.0 / a.value.size)


# elementwise nonlinearities

_register("step", lambda v, a: (v[0] > 0).astype(np.float64), lambda g, out, p, a: (None,))
_register("relu", lambda v, a: np.maximum(v[0], 0.0),
          lambda g, out, p, a: (mul(g, step(p[0])),))
_register("exp", lambda v, a: np.exp(v[0]), lambda g, out, p, a: (mul(g, out),))
_register("log", lambda v, a: np.log(np.maximum(v[0], LOG_FLOOR)),
          lambda g, out, p, a: (div(mul(g, step(shift(p[0], -LOG_FLOOR))),
                                    clamp(p[0], LOG_FLOOR, np.inf)),))


def _clamp_mask(v, a):
    lo, hi = a
    x = v[0]
    return ((x >= lo) & (x <= hi)).astype(np.float64)


_register("clamp", lambda v, a: np.clip(v[0], a[0], a[1]),
          lambda g, out, p, a: (mul(g, _apply("clamp_mask", (p[0],), a)),))
_register("clamp_mask", _clamp_mask, lambda g, out, p, a: (None,))


def step(a: Node) -> Node:
    """Heaviside indicator of ``a > 0``; its derivative is taken as zero."""
    return _apply("step", (a,))


def relu(a: Node) -> Node:
    return _apply("relu", (a,))


def exp(a: Node) -> Node:
    return _apply("exp", (a,))


def log(a: Node) -> Node:
    return _apply("log", (a,))


def clamp(a: Node, lo: float, hi: float) -> Node:
    return _apply("clamp", (a,), (float(lo), float(hi)))


def _softmax_fwd(v, a):
    z = v[0] - v[0].max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_vjp(g, out, p, a):
    inner = row_sum(mul(g, out))
    return (mul(out, sub(g, inner)),)


_register("softmax", _softmax_fwd, _softmax_vjp)
_register("stop_gradient", lambda v, a: v[0], lambda g, out, p, a: (None,))


def softmax_rows(a: Node) -> Node:
    return _apply("softmax", (a,))


def stop_gradient(a: Node) -> Node:
    return _apply("stop_gradient", (a,))


# --------------------------------------------------------------------------
# differentiation


@dataclass
class GradResult:
    loss: float
    grads: list[np.ndarray]


def grad(output: Node, wrt: Sequence[Node], create_graph: bool = False) -> list[Node]:
    """Gradients of a 1x1 ``output`` with respect to ``wrt``.

    With ``create_graph`` the backward computation is itself recorded on the
    tape, so the returned nodes can be differentiated again. Inputs that do
    not influence ``output`` get a zero gradient.
    """
    if output.shape != (1, 1):
        raise ShapeError(f"gradient needs a scalar output, got {output.shape}")
    tape = output.tape
    if output.index < 0 or tape.nodes[output.index] is not output:
        raise ValueError("output node is not recorded on its tape")
    for w in wrt:
        if w.tape is not tape or w.index < 0:
            raise ValueError("gradient requested for a node outside the tape")

    grads: dict[int, Node] = {}
    saved = tape.recording
    tape.recording = create_graph
    try:
        grads[output.index] = tape.const(np.ones((1, 1))) if create_graph else \
            Node(tape, np.ones((1, 1)), "const")
        for i in range(output.index, -1, -1):
            g = grads.get(i)
            if g is None:
                continue
            node = tape.nodes[i]
            if not node.requires_grad or not node.parents:
                continue
            pgrads = _OPS[node.op].vjp(g, node, node.parents, node.attrs)
            for parent, pg in zip(node.parents, pgrads):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(parent.index)
                grads[parent.index] = pg if prev is None else add(prev, pg)
        out = []
        for w in wrt:
            g = grads.get(w.index)
            if g is None:
                g = tape.const(np.zeros(w.shape)) if create_graph else \
                    Node(tape, np.zeros(w.shape), "const")
            out.append(g)
    finally:
        tape.recording = saved
    return out


def record_forward(fn: Callable[..., Node], params: Sequence[np.ndarray], *inputs) -> tuple[Tape, Node]:
    """Record ``fn(param_nodes, *input_nodes)`` on a fresh tape."""
    tape = Tape()
    pnodes = [tape.param(p) for p in params]
    inodes = [tape.const(x) for x in inputs]
    out = fn(pnodes, *inodes)
    if out.shape != (1, 1):
        raise ShapeError(f"recorded expression must be scalar, got {out.shape}")
    return tape, out


def backward(tape: Tape, output: Node) -> GradResult:
    """Gradient of ``output`` with respect to every registered parameter."""
    gs = grad(output, tape.params)
    return GradResult(output.item(), [g.value.copy() for g in gs])


def finite_diff(loss: Callable[[list[np.ndarray]], float], params: Sequence[np.ndarray],
                eps: float = 1e-6) -> GradResult:
    """Central-difference gradient estimate; a test oracle only."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = [np.array(p, dtype=np.float64) for p in params]
    base = float(loss(params))
    grads = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            hi = float(loss(params))
            p[idx] = old - eps
            lo = float(loss(params))
            p[idx] = old
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NonFiniteError(f"loss not finite around coordinate {idx}")
            g[idx] = (hi - lo) / (2 * eps)
        grads.append(g)
    return GradResult(base, grads)


def grad_through_step(
    inner_loss: Callable[[list[Node]], Node],
    outer_loss: Callable[[list[Node], list[Node]], Node],
    theta: Sequence[np.ndarray],
    beta: float,
    order: str = "second",
) -> GradResult:
    """Total derivative of ``outer_loss(theta, phi(theta))`` where
    ``phi = theta - beta * grad(inner_loss)(theta)``.

    ``order="second"`` differentiates through the inner gradient (the
    Hessian-vector term is included); ``order="first"`` treats the inner
    gradient as a constant, i.e. d(phi)/d(theta) = I.
    """
    if order not in ("first", "second"):
        raise ValueError(f"order must be 'first' or 'second', got {order!r}")
    tape = Tape()
    th = [tape.param(p) for p in theta]
    phi = inner_step(th, inner_loss(th), beta, order)
    return backward(tape, outer_loss(th, phi))


def inner_step(theta: Sequence[Node], inner: Node, beta: float, order: str) -> list[Node]:
    """One plain gradient-descent step, recorded on ``inner``'s tape."""
    if beta == 0.0:
        return list(theta)
    tape = inner.tape
    gs = grad(inner, theta, create_graph=(order == "second"))
    if order == "first":
        gs = [tape.const(g.value) for g in gs]
    return [t - scale(g, beta) for t, g in zip(theta, gs)]


def hvp(loss: Callable[[list[Node]], Node], params: Sequence[np.ndarray],
        vector: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Hessian-vector product by differentiating <grad, v>."""
    tape = Tape()
    th = [tape.param(p) for p in params]
    gs = grad(loss(th), th, create_graph=True)
    dot = None
    for g, v in zip(gs, vector):
        term = total(mul(g, tape.const(v)))
        dot = term if dot is None else add(dot, term)
    return [g.value.copy() for g in grad(dot, th)]
