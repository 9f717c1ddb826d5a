"""Dense tensors with define-by-run reverse-mode differentiation.

Operations record themselves on the active :class:`Graph` (a tape) whenever
one of their inputs requires a gradient.  :func:`backward` walks the tape in
reverse and accumulates gradients into leaf tensors.  Outside a ``with
Graph():`` block nothing is recorded, which is how evaluation and
finite-difference probing run cheaply.

Broadcasting follows numpy rules for the elementwise binary ops; gradients
are summed back to each operand's shape.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor", "Graph", "ShapeError", "NonDeterministicLossError", "GradCheckReport",
    "backward", "grad_check", "set_debug",
    "add", "sub", "mul", "neg", "matmul", "matvec", "dot", "linear",
    "tanh", "sigmoid", "exp", "log", "log_sigmoid", "softmax", "log_softmax",
    "sum", "mean", "concat", "stack", "reshape", "take", "embedding",
    "masked_fill", "where", "cross_entropy_rows", "straight_through", "detach",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""

    def __init__(self, op: str, *shapes: tuple[int, ...], detail: str = ""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes {', '.join(str(tuple(s)) for s in shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonDeterministicLossError(RuntimeError):
    pass


_DEBUG = False


def set_debug(flag: bool) -> None:
    """Toggle finiteness checks after every forward op."""
    global _DEBUG
    _DEBUG = bool(flag)


class Tensor:
    """An n-dimensional float array that may take part in a graph."""

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    __array_priority__ = 100

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    out: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Graph:
    """Ordered record of executed ops; inputs of a node always precede it."""

    _local = threading.local()

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Graph":
        stack = getattr(Graph._local, "stack", None)
        if stack is None:
            stack = Graph._local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Graph._local.stack.pop()

    @staticmethod
    def current() -> "Graph | None":
        stack = getattr(Graph._local, "stack", None)
        return stack[-1] if stack else None

    def __len__(self) -> int:
        return len(self.nodes)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], bwd) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(t.data)) for t in inputs):
            raise FloatingPointError(f"{op}: non-finite output from finite inputs")
    out = Tensor(data)
    graph = Graph.current()
    if graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        graph.nodes.append(Node(op, inputs, out, bwd))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def neg(a: Tensor) -> Tensor:
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _make("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(a)) without overflow for large |a|."""
    x = a.data
    y = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    s = _sigmoid(-x)
    return _make("log_sigmoid", y, (a,), lambda g: (g * s,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make("exp", y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _make("log", np.log(x), (a,), lambda g: (g / x,))


def detach(a: Tensor) -> Tensor:
    return Tensor(a.data)


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Forward value ``hard``; the gradient passes to ``soft`` unchanged."""
    hard = np.asarray(hard, dtype=soft.dtype)
    if hard.shape != soft.shape:
        raise ShapeError("straight_through", hard.shape, soft.shape)
    return _make("straight_through", hard.copy(), (soft,), lambda g: (g,))


def where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Pick ``a`` where ``cond`` holds, else ``b``; exact, no arithmetic on values."""
    _broadcast_shape("where", a, b)
    cond = np.asarray(cond, dtype=bool)
    sa, sb = a.shape, b.shape
    y = np.where(cond, a.data, b.data)
    return _make("where", y, (a, b), lambda g: (_unbroadcast(np.where(cond, g, 0.0), sa),
                                               _unbroadcast(np.where(cond, 0.0, g), sb)))


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by ``value`` (no gradient there)."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    y = np.where(mask, np.asarray(value, dtype=a.dtype), a.data)
    return _make("masked_fill", y, (a,), lambda g: (np.where(mask, 0.0, g),))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` where ``b`` is 2-D and ``a`` has one or more leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.data.ndim != 2 or a.data.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def bwd(g):
        ga = g @ bd.T
        if ad.ndim == 1:
            gb = np.outer(ad, g)
        else:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _make("matmul", ad @ bd, (a, b), bwd)


def matvec(w: Tensor, x: Tensor) -> Tensor:
    """``w @ x`` for a matrix ``w`` and a vector ``x``."""
    if w.data.ndim != 2 or x.data.ndim != 1 or w.shape[1] != x.shape[0]:
        raise ShapeError("matvec", w.shape, x.shape)
    wd, xd = w.data, x.data
    return _make("matvec", wd @ xd, (w, x), lambda g: (np.outer(g, xd), wd.T @ g))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map ``x @ w.T + b`` with ``w`` stored as (out, in)."""
    if w.data.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError("linear", x.shape, w.shape)
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError("linear", w.shape, b.shape, detail="bias length must match rows")
    xd, wd = x.data, w.data
    y = xd @ wd.T
    if b is not None:
        y = y + b.data

    def bwd(g):
        gx = g @ wd
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ xd.reshape(-1, xd.shape[-1])
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    return _make("linear", y, inputs, bwd)


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product over the last axis (leading axes broadcast)."""
    _broadcast_shape("dot", a, b)
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError("dot", a.shape, b.shape)
    ad, bd = a.data, b.data

    def bwd(g):
        g = g[..., None]
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make("dot", np.sum(ad * bd, axis=-1), (a, b), bwd)


# ---------------------------------------------------------------------------
# reductions and normalisation
# ---------------------------------------------------------------------------


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001
    shape = a.shape
    y = a.data.sum(axis=axis)

    def bwd(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", np.asarray(y), (a,), bwd)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    shape = a.shape
    y = a.data.mean(axis=axis)

    def bwd(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _make("mean", np.asarray(y), (a,), bwd)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis; rows may contain -inf but not only -inf."""
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

    return _make("softmax", y, (a,), bwd)


def log_softmax(a: Tensor) -> Tensor:
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def bwd(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make("log_softmax", y, (a,), bwd)


def cross_entropy_rows(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-row ``-log softmax(logits)[target]`` for 2-D logits."""
    if logits.data.ndim != 2:
        raise ShapeError("cross_entropy_rows", logits.shape, detail="expected 2-D logits")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (logits.shape[0],):
        raise ShapeError("cross_entropy_rows", logits.shape, targets.shape)
    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=-1))
    rows = np.arange(len(targets))
    y = lse - shifted[rows, targets]

    def bwd(g):
        p = np.exp(shifted - lse[:, None])
        p[rows, targets] -= 1.0
        return (p * g[:, None],)

    return _make("cross_entropy_rows", y, (logits,), bwd)


# ---------------------------------------------------------------------------
# structural
# ---------------------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    nd = tensors[0].data.ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.data.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError("concat", *(t.shape for t in tensors))
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    y = np.concatenate([t.data for t in tensors], axis=ax)
    return _make("concat", y, tensors, lambda g: tuple(np.split(g, bounds, axis=ax)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    first = tensors[0].shape
    if any(t.shape != first for t in tensors):
        raise ShapeError("stack", *(t.shape for t in tensors))
    y = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % y.ndim
    return _make("stack", y, tensors,
                 lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(tensors))))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", old, tuple(shape)) from None
    return _make("reshape", y, (a,), lambda g: (g.reshape(old),))


def take(a: Tensor, index) -> Tensor:
    """Basic or advanced indexing, ``a[index]``."""
    shape, dtype = a.shape, a.dtype
    y = a.data[index]
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in parts)

    def bwd(g):
        out = np.zeros(shape, dtype=dtype)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _make("take", np.array(y), (a,), bwd)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError("embedding", table.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding: id out of range for table with {table.shape[0]} rows")
    shape, dtype = table.shape, table.dtype

    def bwd(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (out,)

    return _make("embedding", table.data[ids], (table,), bwd)


# ---------------------------------------------------------------------------
# backward and gradient checking
# ---------------------------------------------------------------------------


def backward(graph: Graph, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    produced = {id(n.out) for n in graph.nodes}
    if id(loss) not in produced:
        raise ValueError("backward: loss was not produced on this graph")

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                if key not in produced:
                    leaves[key] = t
    for key, t in leaves.items():
        g = grads[key].astype(t.dtype, copy=False)
        t.grad = g.copy() if t.grad is None else t.grad + g


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float
    epsilon: float
    loss: float = 0.0
    evaluations: int = 0
    worst: str = field(default="")

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.errors.values())

    def to_dict(self) -> dict:
        return {"passed": self.passed, "tolerance": self.tolerance, "epsilon": self.epsilon,
                "loss": self.loss, "evaluations": self.evaluations, "worst": self.worst,
                "errors": self.errors}


def grad_check(loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
               params: Mapping[str, Tensor],
               epsilon: float = 1e-6,
               tolerance: float = 1e-5,
               names: Iterable[str] | None = None) -> GradCheckReport:
    """Compare reverse-mode gradients with central finite differences.

    The per-parameter error is ``max|g_ad - g_fd| / (max|g_fd| + epsilon)``.
    ``loss_fn`` must be deterministic; it is evaluated twice up front and a
    mismatch raises :class:`NonDeterministicLossError`.
    """
    if not 0.0 < epsilon <= 1e-2:
        raise ValueError("epsilon must lie in (0, 1e-2]")
    names = list(params) if names is None else list(names)
    for p in params.values():
        p.zero_grad()
    with Graph() as g:
        loss = loss_fn(params)
    backward(g, loss)
    base = float(loss.data)
    again = float(loss_fn(params).data)
    if base != again:
        raise NonDeterministicLossError(f"loss_fn returned {base!r} then {again!r}")

    errors: dict[str, float] = {}
    evals = 2
    for name in names:
        p = params[name]
        ad = np.zeros_like(p.data) if p.grad is None else p.grad
        fd = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = float(loss_fn(params).data)
            flat[i] = orig - epsilon
            fm = float(loss_fn(params).data)
            flat[i] = orig
            fd.reshape(-1)[i] = (fp - fm) / (2.0 * epsilon)
            evals += 2
        errors[name] = float(np.max(np.abs(ad - fd)) / (np.max(np.abs(fd)) + epsilon))
    worst = max(errors, key=errors.get) if errors else ""
    return GradCheckReport(errors, tolerance, epsilon, base, evals, worst)
