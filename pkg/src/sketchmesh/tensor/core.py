"""Reverse-mode automatic differentiation over dense numpy arrays.

The engine is define-by-run: every operation on tensors that require
gradients appends a node to the active :class:`Graph`. Backward rules are
expressed in terms of tensor operations themselves, so running a backward
pass with ``create_graph=True`` records the gradient computation and a
second backward pass through it is valid (required by gradient penalties).

Broadcasting is deliberately limited to scalar-vs-tensor; binary ops on
unequal non-scalar shapes are an error.
"""

from __future__ import annotations

import contextlib
import weakref
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

_default_dtype = np.dtype(np.float64)


def set_default_dtype(dtype) -> None:
    """Switch the dtype new tensors are created with (float64 or float32)."""
    global _default_dtype
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ValueError(f"unsupported tensor dtype {dt}")
    _default_dtype = dt


def default_dtype() -> np.dtype:
    return _default_dtype


@contextlib.contextmanager
def using_dtype(dtype):
    prev = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


class GraphError(RuntimeError):
    """Backward invoked on a graph that was already consumed."""


class Node:
    """One recorded operation: inputs, a vjp closure, and bookkeeping."""

    __slots__ = ("op", "inputs", "vjp", "differentiable", "released", "out_ref", "__weakref__")

    def __init__(self, op: str, inputs: tuple, vjp: Callable, differentiable: bool):
        self.op = op
        self.inputs = inputs
        self.vjp = vjp
        self.differentiable = differentiable
        self.released = False
        self.out_ref: Optional[weakref.ref] = None


class Graph:
    """Append-only record of the operations of the current step."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.epoch = 0

    def add(self, node: Node) -> None:
        self.nodes.append(node)

    def reset(self) -> None:
        """Drop all recorded nodes and start a new generation."""
        self.nodes.clear()
        self.epoch += 1

    def __len__(self) -> int:
        return len(self.nodes)


ACTIVE_GRAPH = Graph()

_grad_enabled = True


def grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def enable_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = True
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense n-dimensional array, optionally tracked by the autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _default_dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[Tensor] = None
        self.node: Optional[Node] = None

    # -- introspection ------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def is_leaf(self) -> bool:
        return self.node is None

    def __repr__(self) -> str:
        flags = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flags})"

    # -- graph handles ------------------------------------------------------

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def requires_grad_(self, flag: bool = True) -> "Tensor":
        if flag and self.node is not None:
            raise ValueError("requires_grad_ is only valid on leaf tensors")
        self.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, create_graph: bool = False, retain_graph: Optional[bool] = None) -> None:
        backward(self, create_graph=create_graph, retain_graph=retain_graph)

    # -- operators (implementations live in this module below) --------------

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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        from .ops import matmul

        return matmul(self, other)

    def __pow__(self, exponent):
        if exponent == 2:
            return square(self)
        return powc(self, exponent)

    def sum(self, axes=None, keepdims=False):
        from .ops import tsum

        return tsum(self, axes=axes, keepdims=keepdims)

    def mean(self, axes=None, keepdims=False):
        from .ops import tmean

        return tmean(self, axes=axes, keepdims=keepdims)

    def reshape(self, *shape):
        from .ops import reshape

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=DEFAULT_DTYPE))


def record(out: Tensor, op: str, inputs: Sequence[Tensor], vjp: Callable,
           differentiable: bool = True) -> Tensor:
    """Attach a graph node to ``out`` if recording is active.

    ``vjp`` maps the output cotangent to one cotangent (or None) per input.
    ``differentiable=False`` marks hand-written vjps that cannot themselves
    be traced; backward with ``create_graph=True`` refuses to cross them.
    """
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(op, tuple(inputs), vjp, differentiable)
        node.out_ref = weakref.ref(out)
        out.node = node
        ACTIVE_GRAPH.add(node)
    return out


# ---------------------------------------------------------------------------
# backward engine


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for t in node.inputs:
            if t.node is not None and id(t.node) not in visited:
                stack.append((t.node, False))
    return order  # producers before consumers


def _run(root: Tensor, seed: Tensor, targets: Optional[Sequence[Tensor]],
         create_graph: bool, retain_graph: bool, write_leaf_grads: bool):
    target_ids = {id(t) for t in targets} if targets else set()
    collected: dict[int, Tensor] = {}
    grads: dict[int, Tensor] = {id(root): seed}
    holders: dict[int, Tensor] = {id(root): root}

    order = _topo_order(root.node) if root.node is not None else []
    for node in order:
        if node.released:
            raise GraphError(
                f"backward through op '{node.op}' a second time; the graph was "
                "already consumed (pass retain_graph=True to keep it)")

    ctx = enable_grad if create_graph else no_grad
    for node in reversed(order):
        out = node.out_ref() if node.out_ref is not None else None
        if out is None:
            continue
        g = grads.pop(id(out), None)
        if g is None:
            continue
        if id(out) in target_ids:
            collected[id(out)] = g
        if create_graph and not node.differentiable:
            raise GraphError(
                f"op '{node.op}' does not support double backward "
                "(create_graph=True)")
        with ctx():
            in_grads = node.vjp(g)
            for t, ig in zip(node.inputs, in_grads):
                if ig is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = add(grads[key], ig)
                else:
                    grads[key] = ig
                    holders[key] = t

    # whatever is left in `grads` belongs to leaves (or unpopped root)
    if id(root) in grads and id(root) in target_ids:
        collected[id(root)] = grads[id(root)]
    if write_leaf_grads:
        with ctx():
            for key, g in grads.items():
                t = holders[key]
                if t.node is None and t.requires_grad:
                    t.grad = g if t.grad is None else add(t.grad, g)
    for key in target_ids:
        if key not in collected and key in grads:
            collected[key] = grads[key]

    if not retain_graph:
        for node in order:
            node.released = True
            node.vjp = None  # type: ignore[assignment]
            node.inputs = ()
    return collected


def backward(loss: Tensor, create_graph: bool = False,
             retain_graph: Optional[bool] = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires-grad leaf.

    ``loss`` must be a scalar. Gradients add to any existing ``.grad``. With
    ``create_graph=True`` the computed gradients are themselves recorded, so
    a second backward through them is valid.
    """
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if retain_graph is None:
        retain_graph = create_graph
    seed = Tensor(np.ones_like(loss.data))
    _run(loss, seed, None, create_graph, retain_graph, write_leaf_grads=True)


def grad(output: Tensor, inputs: Sequence[Tensor], create_graph: bool = False,
         retain_graph: Optional[bool] = None) -> list[Optional[Tensor]]:
    """Return d(output)/d(input) for each input without touching ``.grad``."""
    if output.size != 1:
        raise ValueError(f"grad requires a scalar output, got shape {output.shape}")
    if retain_graph is None:
        retain_graph = create_graph
    seed = Tensor(np.ones_like(output.data))
    collected = _run(output, seed, inputs, create_graph, retain_graph,
                     write_leaf_grads=False)
    return [collected.get(id(t)) for t in inputs]


# ---------------------------------------------------------------------------
# elementwise operations

def _binary_shapes(a: Tensor, b: Tensor, op: str):
    if a.shape == b.shape:
        return
    if a.size == 1 or b.size == 1:
        return
    raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape} "
                     "(only scalar broadcast is supported)")


def _reduce_to(g: Tensor, shape: tuple) -> Tensor:
    """Collapse a broadcasted cotangent back to the scalar operand's shape."""
    if g.shape == shape:
        return g
    from .ops import reshape, tsum

    return reshape(tsum(g), shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")
    out = Tensor(a.data + b.data)
    return record(out, "add", (a, b),
                  lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")
    out = Tensor(a.data - b.data)
    return record(out, "sub", (a, b),
                  lambda g: (_reduce_to(g, a.shape), _reduce_to(neg(g), b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")
    out = Tensor(a.data * b.data)
    return record(out, "mul", (a, b),
                  lambda g: (_reduce_to(mul(g, b), a.shape),
                             _reduce_to(mul(g, a), b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "div")
    if np.any(b.data == 0.0):
        raise ZeroDivisionError("div: divisor contains zero")
    out = Tensor(a.data / b.data)
    return record(out, "div", (a, b),
                  lambda g: (_reduce_to(div(g, b), a.shape),
                             _reduce_to(neg(div(mul(g, a), mul(b, b))), b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)
    return record(out, "neg", (a,), lambda g: (neg(g),))


def texp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.data))
    return record(out, "exp", (a,), lambda g: (mul(g, out),))


def tlog(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log: input must be strictly positive")
    out = Tensor(np.log(a.data))
    return record(out, "log", (a,), lambda g: (div(g, a),))


def _sigmoid_arr(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(_sigmoid_arr(a.data))
    return record(out, "sigmoid", (a,),
                  lambda g: (mul(g, mul(out, sub(1.0, out))),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))
    mask = Tensor((a.data > 0.0).astype(a.data.dtype))
    return record(out, "relu", (a,), lambda g: (mul(g, mask),))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.where(a.data > 0.0, a.data, slope * a.data))
    mask = Tensor(np.where(a.data > 0.0, 1.0, slope))
    return record(out, "leaky_relu", (a,), lambda g: (mul(g, mask),))


def square(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.square(a.data))
    return record(out, "square", (a,), lambda g: (mul(g, mul(2.0, a)),))


def tsqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0.0):
        raise ValueError("sqrt: input must be non-negative")
    out = Tensor(np.sqrt(a.data))
    return record(out, "sqrt", (a,), lambda g: (div(mul(0.5, g), out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.tanh(a.data))
    return record(out, "tanh", (a,),
                  lambda g: (mul(g, sub(1.0, square(out))),))


def tsin(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.sin(a.data))
    return record(out, "sin", (a,), lambda g: (mul(g, tcos(a)),))


def tcos(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.cos(a.data))
    return record(out, "cos", (a,), lambda g: (neg(mul(g, tsin(a))),))


def softplus(a) -> Tensor:
    """log(1 + exp(a)), overflow-safe for |a| up to ~1e308."""
    a = as_tensor(a)
    x = a.data
    out = Tensor(np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x))))
    return record(out, "softplus", (a,), lambda g: (mul(g, sigmoid(a)),))


def powc(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    e = float(exponent)
    if e != int(e) and np.any(a.data < 0.0):
        raise ValueError("pow: fractional exponent on negative base")
    out = Tensor(np.power(a.data, e))
    return record(out, "pow", (a,),
                  lambda g: (mul(g, mul(e, powc(a, e - 1.0))),))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "exp": texp,
    "log": tlog,
    "sigmoid": sigmoid,
    "relu": relu,
    "square": square,
}


def elementwise(op_kind: str, a, b=None) -> Tensor:
    """Dispatch by name over the core elementwise vocabulary."""
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op '{op_kind}'; "
                         f"expected one of {sorted(_ELEMENTWISE)}") from None
    if op_kind in ("add", "sub", "mul", "div"):
        if b is None:
            raise ValueError(f"elementwise '{op_kind}' is binary")
        return fn(a, b)
    if b is not None:
        raise ValueError(f"elementwise '{op_kind}' is unary")
    return fn(a)
