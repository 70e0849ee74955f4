"""Define-by-run reverse-mode differentiation over float64 numpy arrays.

A :class:`Node` wraps a value and remembers how it was produced. Calling
:func:`backward` on a scalar node walks the graph in reverse topological
order and accumulates ``d root / d leaf`` into the ``grad`` of every leaf
that requires gradients. Graphs are rebuilt for every minibatch.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import DomainError, FormatError, NumericError, ShapeError

DTYPE = np.float64
LEAKY_SLOPE = 0.01


class Node:
    __slots__ = ("value", "parents", "op", "requires_grad", "grad", "_backward")

    def __init__(self, value, parents=(), op="leaf", backward_fn=None, requires_grad=False):
        self.value = np.asarray(value, dtype=DTYPE)
        self.parents = tuple(parents)
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.grad = np.zeros_like(self.value)
        self._backward = backward_fn

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self):
        return not self.parents

    def item(self) -> float:
        return float(self.value)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)


def parameter(value) -> Node:
    """Trainable leaf."""
    return Node(np.array(value, dtype=DTYPE), requires_grad=True)


def constant(value) -> Node:
    if isinstance(value, Node):
        return value
    return Node(value)


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_same_shape(a: Node, b: Node, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- layers

def affine(x, W, b=None) -> Node:
    """``x @ W + b`` for a single row (in,) or a batch (B, in)."""
    x, W = _as_node(x), _as_node(W)
    if W.value.ndim != 2 or x.value.ndim not in (1, 2) or x.shape[-1] != W.shape[0]:
        raise ShapeError(f"affine: input shape {x.shape} incompatible with weight shape {W.shape}")
    out = x.value @ W.value
    parents = [x, W]
    if b is not None:
        b = _as_node(b)
        if b.shape != (W.shape[1],):
            raise ShapeError(f"affine: bias shape {b.shape} does not match weight shape {W.shape}")
        out = out + b.value
        parents.append(b)

    def backward_fn(g):
        xv = x.value
        gx = g @ W.value.T
        gW = np.outer(xv, g) if xv.ndim == 1 else xv.T @ g
        if b is None:
            return gx, gW
        gb = g if g.ndim == 1 else g.sum(axis=0)
        return gx, gW, gb

    return Node(out, parents, "affine", backward_fn)


# ----------------------------------------------------------- elementwise

def _unary(x, op, fwd, dfwd):
    x = _as_node(x)
    out = fwd(x.value)

    def backward_fn(g):
        return (g * dfwd(x.value, out),)

    return Node(out, (x,), op, backward_fn)


def relu(x) -> Node:
    return _unary(x, "relu", lambda v: np.maximum(v, 0.0), lambda v, o: (v > 0).astype(DTYPE))


def leaky_relu(x, slope: float = LEAKY_SLOPE) -> Node:
    return _unary(
        x,
        "leaky_relu",
        lambda v: np.where(v > 0, v, slope * v),
        lambda v, o: np.where(v > 0, 1.0, slope),
    )


def _stable_sigmoid(v):
    a = np.atleast_1d(v)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out.reshape(np.shape(v))


def sigmoid(x) -> Node:
    return _unary(x, "sigmoid", _stable_sigmoid, lambda v, o: o * (1.0 - o))


def exp(x) -> Node:
    return _unary(x, "exp", np.exp, lambda v, o: o)


def neg_exp(x) -> Node:
    """exp(-x)."""
    return _unary(x, "neg_exp", lambda v: np.exp(-v), lambda v, o: -o)


def log(x) -> Node:
    x = _as_node(x)
    if np.any(x.value <= 0):
        raise DomainError("log: argument must be strictly positive")
    return _unary(x, "log", np.log, lambda v, o: 1.0 / v)


def neg_log1mexp(x) -> Node:
    """-log(1 - exp(-x)) for x > 0, evaluated as -log(-expm1(-x))."""
    x = _as_node(x)
    if np.any(x.value <= 0):
        raise DomainError("neg_log1mexp: argument must be strictly positive")
    return _unary(
        x,
        "neg_log1mexp",
        lambda v: -np.log(-np.expm1(-v)),
        lambda v, o: -1.0 / np.expm1(v),
    )


def softplus(x) -> Node:
    """log(1 + exp(x)) without overflow."""
    return _unary(
        x,
        "softplus",
        lambda v: np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v))),
        lambda v, o: _stable_sigmoid(v),
    )


def reciprocal(x) -> Node:
    x = _as_node(x)
    if np.any(x.value == 0):
        raise DomainError("reciprocal: division by zero")
    return _unary(x, "reciprocal", lambda v: 1.0 / v, lambda v, o: -o * o)


def clamp_min(x, floor: float) -> Node:
    """max(x, floor); the gradient is zero where the floor is active."""
    return _unary(
        x, "clamp_min", lambda v: np.maximum(v, floor), lambda v, o: (v >= floor).astype(DTYPE)
    )


def abs_(x) -> Node:
    """|x| with subgradient sign(x), taken as 0 at exactly 0."""
    return _unary(x, "abs", np.abs, lambda v, o: np.sign(v))


def scale(x, factor: float) -> Node:
    x = _as_node(x)
    factor = float(factor)
    return Node(x.value * factor, (x,), "scale", lambda g: (g * factor,))


def add(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_same_shape(a, b, "add")
    return Node(
        a.value + b.value,
        (a, b),
        "add",
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_same_shape(a, b, "sub")
    return Node(
        a.value - b.value,
        (a, b),
        "sub",
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_same_shape(a, b, "mul")
    return Node(
        a.value * b.value,
        (a, b),
        "mul",
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


_ELEMENTWISE = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
    "exp": exp,
    "neg_exp": neg_exp,
    "log": log,
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "abs": abs_,
    "softplus": softplus,
    "reciprocal": reciprocal,
    "neg_log1mexp": neg_log1mexp,
    "clamp_min": clamp_min,
}


def elementwise(kind: str, *args, **kwargs) -> Node:
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    return fn(*args, **kwargs)


# --------------------------------------------------------------- reduce

def _check_nonempty(x: Node, op: str):
    if x.value.size == 0:
        raise DomainError(f"{op}: empty tensor")


def sum_(x, axis=None) -> Node:
    x = _as_node(x)
    _check_nonempty(x, "sum")
    shape = x.shape

    def backward_fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Node(x.value.sum(axis=axis), (x,), "sum", backward_fn)


def mean(x, axis=None) -> Node:
    x = _as_node(x)
    _check_nonempty(x, "mean")
    n = x.value.size if axis is None else x.shape[axis]
    shape = x.shape

    def backward_fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return Node(x.value.mean(axis=axis), (x,), "mean", backward_fn)


def sq_l2_norm(x, axis=None) -> Node:
    x = _as_node(x)
    _check_nonempty(x, "sq_l2_norm")

    def backward_fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (2.0 * g * x.value,)

    return Node(np.sum(x.value * x.value, axis=axis), (x,), "sq_l2_norm", backward_fn)


def l2_norm(x, axis=None) -> Node:
    """Euclidean norm; the gradient at the origin is taken as 0."""
    x = _as_node(x)
    _check_nonempty(x, "l2_norm")
    out = np.sqrt(np.sum(x.value * x.value, axis=axis))

    def backward_fn(g):
        o = out if axis is None else np.expand_dims(out, axis)
        gg = g if axis is None else np.expand_dims(g, axis)
        safe = np.where(o > 0, o, 1.0)
        return (np.where(o > 0, gg * x.value / safe, 0.0),)

    return Node(out, (x,), "l2_norm", backward_fn)


_REDUCE = {"sum": sum_, "mean": mean, "l2_norm": l2_norm, "sq_l2_norm": sq_l2_norm}


def reduce(kind: str, x, axis=None) -> Node:
    if kind == "abs":
        x = _as_node(x)
        _check_nonempty(x, "abs")
        return abs_(x)
    try:
        return _REDUCE[kind](x, axis=axis)
    except KeyError:
        raise ValueError(f"unknown reduction {kind!r}") from None


# ------------------------------------------------------------- backward

def _topological_order(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable trainable leaf."""
    if root.value.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    grads = {id(root): np.ones_like(root.value)}
    for node in reversed(_topological_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = node.grad + g
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# --------------------------------------------------------- ParameterSet

class ParameterSet:
    """Named, ordered trainable tensors plus a per-layer bias flag.

    Parameter names follow ``<layer>.W`` / ``<layer>.b``.
    """

    def __init__(self):
        self._params: dict[str, Node] = {}
        self.has_bias: dict[str, bool] = {}

    def add_layer(self, layer: str, W, b=None):
        if layer in self.has_bias:
            raise ValueError(f"duplicate layer {layer!r}")
        self.has_bias[layer] = b is not None
        self._params[f"{layer}.W"] = parameter(W)
        if b is not None:
            self._params[f"{layer}.b"] = parameter(b)

    def weight(self, layer: str) -> Node:
        return self._params[f"{layer}.W"]

    def bias(self, layer: str) -> Node | None:
        return self._params.get(f"{layer}.b")

    @property
    def layers(self) -> list[str]:
        return list(self.has_bias)

    def __getitem__(self, name: str) -> Node:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self._params.items()}

    def grads(self) -> dict[str, np.ndarray]:
        return {k: v.grad for k, v in self._params.items()}

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for name, arr in arrays.items():
            node = self._params[name]
            if node.value.shape != np.shape(arr):
                raise ShapeError(f"{name}: expected shape {node.value.shape}, got {np.shape(arr)}")
            node.value = np.array(arr, dtype=DTYPE)

    def copy(self) -> "ParameterSet":
        out = ParameterSet()
        for layer, flag in self.has_bias.items():
            out.add_layer(
                layer,
                self.weight(layer).value.copy(),
                self.bias(layer).value.copy() if flag else None,
            )
        return out

    def to_text(self) -> str:
        return "".join(
            f"{name} {_format_shape(node.value.shape)} {' '.join(format_float(v) for v in node.value.ravel())}\n"
            for name, node in self._params.items()
        )

    @classmethod
    def from_text(cls, text: str) -> "ParameterSet":
        arrays: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) < 2:
                raise FormatError(f"line {lineno}: expected 'name shape values...'", lineno)
            name, shape_txt, *vals = fields
            try:
                shape = tuple(int(s) for s in shape_txt.split("x"))
                data = np.array([float(v) for v in vals], dtype=DTYPE)
            except ValueError:
                raise FormatError(f"line {lineno}: unparsable shape or value", lineno) from None
            if math.prod(shape) != data.size:
                raise FormatError(
                    f"line {lineno}: shape {shape} needs {math.prod(shape)} values, got {data.size}", lineno
                )
            arrays[name] = data.reshape(shape)
        out = cls()
        for name, arr in arrays.items():
            layer, kind = name.rsplit(".", 1)
            if kind == "W":
                out.add_layer(layer, arr, arrays.get(f"{layer}.b"))
            elif kind != "b":
                raise FormatError(f"unknown parameter kind in {name!r}")
        return out


def format_float(v: float) -> str:
    """17 significant digits: enough for an exact float64 round trip."""
    return format(float(v), ".17g")


def _format_shape(shape) -> str:
    return "x".join(str(d) for d in shape) if shape else "1"


# ------------------------------------------------------------ grad check

def grad_check(loss_fn: Callable[[], Node], params: ParameterSet, step: float = 1e-5) -> float:
    """Largest relative error between backprop and central finite differences.

    ``loss_fn`` must rebuild the graph from the current parameter values on
    every call.
    """
    if not 0 < step <= 1e-2:
        raise ValueError("step must lie in (0, 1e-2]")
    params.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.value).all():
        raise NumericError("grad_check: non-finite loss")
    backward(loss)
    worst = 0.0
    for name, node in params.items():
        analytic = node.grad.copy()
        flat = node.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(loss_fn().value)
            flat[i] = orig - step
            down = float(loss_fn().value)
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NumericError(f"grad_check: non-finite loss while perturbing {name}[{i}]")
            numeric = (up - down) / (2.0 * step)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(1e-12, abs(a) + abs(numeric))
            worst = max(worst, err)
    params.zero_grad()
    return worst
