"""Dense float64 tensors with a reverse-mode tape.

Every primitive is a (forward, backward) pair registered in ``OPS``.  Calling
an op on a :class:`Tensor` that belongs to a :class:`Tape` appends a node to
that tape; calling it on plain arrays (or tape-less tensors) just computes the
value, which is what inference code uses.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, NamedTuple, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("value", "tape", "node")

    def __init__(self, value, tape: "Tape | None" = None, node: int = -1):
        self.value = np.asarray(value, dtype=DTYPE)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.node})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]
    value: np.ndarray
    cache: Any = None
    attrs: dict = field(default_factory=dict)


class Tape:
    """Append-only record of a forward computation.

    Leaves are nodes of kind ``"leaf"``; named leaves are parameters and get
    an entry in the gradient map returned by :func:`backward`.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value, name: str | None = None) -> Tensor:
        value = np.array(value, dtype=DTYPE)
        self.nodes.append(Node("leaf", (), value))
        idx = len(self.nodes) - 1
        if name is not None:
            if name in self.params:
                raise KeyError(f"parameter {name!r} already on tape")
            self.params[name] = idx
        return Tensor(value, self, idx)

    def watch(self, params: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
        return {name: self.leaf(v, name) for name, v in params.items()}

    def _attach(self, x, value: np.ndarray) -> int:
        if isinstance(x, Tensor):
            if x.tape is self:
                return x.node
            if x.tape is not None:
                raise ValueError("cannot mix tensors from different tapes")
        # constants: recorded as unnamed leaves so replay sees them
        self.nodes.append(Node("leaf", (), value))
        return len(self.nodes) - 1

    def replay(self) -> bool:
        """Recompute every node from the stored leaves; True if bit-identical."""
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.kind == "leaf":
                values.append(node.value)
                continue
            out, _ = OPS[node.kind].forward(*(values[i] for i in node.inputs), **node.attrs)
            if out.shape != node.value.shape or not np.array_equal(out, node.value):
                return False
            values.append(out)
        return True


class Op(NamedTuple):
    forward: Callable
    backward: Callable
    check: Callable | None = None


OPS: dict[str, Op] = {}


def _value(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=DTYPE)


def apply(kind: str, *inputs, **attrs) -> Tensor:
    op = OPS[kind]
    values = [_value(x) for x in inputs]
    if op.check is not None:
        op.check(*values, **attrs)
    try:
        out, cache = op.forward(*values, **attrs)
    except ValueError as exc:
        raise ShapeError(f"{kind}: incompatible shapes {[v.shape for v in values]} ({exc})") from None
    tape = None
    for x in inputs:
        if isinstance(x, Tensor) and x.tape is not None:
            tape = x.tape
            break
    if tape is None:
        return Tensor(out)
    ids = tuple(tape._attach(x, v) for x, v in zip(inputs, values))
    tape.nodes.append(Node(kind, ids, out, cache, attrs))
    return Tensor(out, tape, len(tape.nodes) - 1)


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradients of scalar ``loss`` for every parameter on ``tape``.

    Parameters the loss does not depend on get zero arrays.
    """
    if loss.tape is not tape:
        raise ValueError("loss was not recorded on this tape")
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[loss.node] = np.ones_like(loss.value)
    for i in range(loss.node, -1, -1):
        g = grads[i]
        node = tape.nodes[i]
        if g is None or node.kind == "leaf":
            continue
        in_vals = [tape.nodes[j].value for j in node.inputs]
        in_grads = OPS[node.kind].backward(g, in_vals, node.value, node.cache, **node.attrs)
        for j, gj in zip(node.inputs, in_grads):
            if gj is None:
                continue
            grads[j] = gj if grads[j] is None else grads[j] + gj
    out = {}
    for name, idx in tape.params.items():
        g = grads[idx]
        out[name] = np.zeros_like(tape.nodes[idx].value) if g is None else g
    return out


# ---------------------------------------------------------------- primitives


def _register(name, check=None):
    def deco(cls):
        OPS[name] = Op(cls.forward, cls.backward, check)
        return cls

    return deco


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


@_register("add")
class _Add:
    forward = staticmethod(lambda a, b: (a + b, None))

    @staticmethod
    def backward(g, ins, out, cache):
        return _unbroadcast(g, ins[0].shape), _unbroadcast(g, ins[1].shape)


@_register("sub")
class _Sub:
    forward = staticmethod(lambda a, b: (a - b, None))

    @staticmethod
    def backward(g, ins, out, cache):
        return _unbroadcast(g, ins[0].shape), _unbroadcast(-g, ins[1].shape)


@_register("mul")
class _Mul:
    forward = staticmethod(lambda a, b: (a * b, None))

    @staticmethod
    def backward(g, ins, out, cache):
        a, b = ins
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _check_matmul(a, b):
    if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")


@_register("matmul", _check_matmul)
class _MatMul:
    forward = staticmethod(lambda a, b: (a @ b, None))

    @staticmethod
    def backward(g, ins, out, cache):
        a, b = ins
        ga = g @ b.T
        a2 = a.reshape(-1, a.shape[-1]) if a.ndim > 1 else a[None, :]
        g2 = g.reshape(-1, b.shape[1]) if g.ndim > 1 else g[None, :]
        return ga, a2.T @ g2


def _check_concat(*xs, axis=-1):
    ref = list(xs[0].shape)
    for x in xs[1:]:
        other = list(x.shape)
        if len(other) != len(ref):
            raise ShapeError(f"concat rank mismatch: {[x.shape for x in xs]}")
        r, o = ref.copy(), other.copy()
        del r[axis], o[axis]
        if r != o:
            raise ShapeError(f"concat shape mismatch on axis {axis}: {[x.shape for x in xs]}")


@_register("concat", _check_concat)
class _Concat:
    @staticmethod
    def forward(*xs, axis=-1):
        return np.concatenate(xs, axis=axis), np.cumsum([x.shape[axis] for x in xs])[:-1]

    @staticmethod
    def backward(g, ins, out, cache, axis=-1):
        return np.split(g, cache, axis=axis)


@_register("stack")
class _Stack:
    @staticmethod
    def forward(*xs, axis=0):
        return np.stack(xs, axis=axis), None

    @staticmethod
    def backward(g, ins, out, cache, axis=0):
        return [np.take(g, i, axis=axis) for i in range(len(ins))]


@_register("slice")
class _Slice:
    @staticmethod
    def forward(x, index=()):
        return np.array(x[index]), None

    @staticmethod
    def backward(g, ins, out, cache, index=()):
        # basic indexing only, so no repeated positions
        gx = np.zeros_like(ins[0])
        gx[index] += g
        return (gx,)


def _check_reshape(x, shape=()):
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")


@_register("reshape", _check_reshape)
class _Reshape:
    @staticmethod
    def forward(x, shape=()):
        return x.reshape(shape), None

    @staticmethod
    def backward(g, ins, out, cache, shape=()):
        return (g.reshape(ins[0].shape),)


@_register("sum")
class _Sum:
    @staticmethod
    def forward(x, axis=None):
        return np.asarray(x.sum(axis=axis)), None

    @staticmethod
    def backward(g, ins, out, cache, axis=None):
        x = ins[0]
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)


def _sigmoid(x):
    # exp of a non-positive argument only
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@_register("sigmoid")
class _Sigmoid:
    forward = staticmethod(lambda x: (_sigmoid(x), None))
    backward = staticmethod(lambda g, ins, out, cache: (g * out * (1.0 - out),))


@_register("tanh")
class _Tanh:
    forward = staticmethod(lambda x: (np.tanh(x), None))
    backward = staticmethod(lambda g, ins, out, cache: (g * (1.0 - out * out),))


@_register("relu")
class _Relu:
    forward = staticmethod(lambda x: (np.maximum(x, 0.0), None))
    backward = staticmethod(lambda g, ins, out, cache: (g * (ins[0] > 0),))


@_register("exp")
class _Exp:
    forward = staticmethod(lambda x: (np.exp(x), None))
    backward = staticmethod(lambda g, ins, out, cache: (g * out,))


@_register("log")
class _Log:
    forward = staticmethod(lambda x: (np.log(x), None))
    backward = staticmethod(lambda g, ins, out, cache: (g / ins[0],))


@_register("log_sigmoid")
class _LogSigmoid:
    forward = staticmethod(lambda x: (-np.logaddexp(0.0, -x), None))
    backward = staticmethod(lambda g, ins, out, cache: (g * _sigmoid(-ins[0]),))


@_register("softmax")
class _Softmax:
    @staticmethod
    def forward(x, axis=-1):
        e = np.exp(x - x.max(axis=axis, keepdims=True))
        return e / e.sum(axis=axis, keepdims=True), None

    @staticmethod
    def backward(g, ins, out, cache, axis=-1):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)


@_register("log_softmax")
class _LogSoftmax:
    @staticmethod
    def forward(x, axis=-1):
        shifted = x - x.max(axis=axis, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True)), None

    @staticmethod
    def backward(g, ins, out, cache, axis=-1):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)


def _check_embedding(table, ids=None):
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding ids out of range for table {table.shape}")


@_register("embedding", _check_embedding)
class _Embedding:
    @staticmethod
    def forward(table, ids=None):
        return table[np.asarray(ids)], None

    @staticmethod
    def backward(g, ins, out, cache, ids=None):
        gt = np.zeros_like(ins[0])
        np.add.at(gt, np.asarray(ids), g)
        return (gt,)


# ------------------------------------------------------------ functional API


def add(a, b) -> Tensor:
    return apply("add", a, b)


def sub(a, b) -> Tensor:
    return apply("sub", a, b)


def mul(a, b) -> Tensor:
    return apply("mul", a, b)


def matmul(a, b) -> Tensor:
    return apply("matmul", a, b)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    return apply("concat", *xs, axis=axis)


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    return apply("stack", *xs, axis=axis)


def slice_(x, index) -> Tensor:
    return apply("slice", x, index=index)


def reshape(x, shape) -> Tensor:
    return apply("reshape", x, shape=tuple(shape))


def sum_(x, axis: int | None = None) -> Tensor:
    return apply("sum", x, axis=axis)


def sigmoid(x) -> Tensor:
    return apply("sigmoid", x)


def tanh(x) -> Tensor:
    return apply("tanh", x)


def relu(x) -> Tensor:
    return apply("relu", x)


def exp(x) -> Tensor:
    return apply("exp", x)


def log(x) -> Tensor:
    return apply("log", x)


def log_sigmoid(x) -> Tensor:
    return apply("log_sigmoid", x)


def softmax(x, axis: int = -1) -> Tensor:
    return apply("softmax", x, axis=axis)


def log_softmax(x, axis: int = -1) -> Tensor:
    return apply("log_softmax", x, axis=axis)


def embedding(table, ids) -> Tensor:
    return apply("embedding", table, ids=np.asarray(ids, dtype=np.int64))


# ------------------------------------------------------ finite differences


def numeric_grad(f: Callable[[dict[str, np.ndarray]], float], params: dict[str, np.ndarray],
                 h: float = 1e-6) -> dict[str, np.ndarray]:
    """Central differences of scalar ``f`` w.r.t. every entry of ``params``."""
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(params)
            flat[i] = orig - h
            fm = f(params)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        out[name] = g
    return out


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Norm-wise relative error; the denominator never drops below ``floor``."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)
