"""Dense row-major tensors with reverse-mode automatic differentiation.

The primitive set is exactly what a small encoder-decoder transformer
needs: matmul, broadcasting elementwise ops, softmax / log-softmax,
layer normalization, embedding lookup, inverted dropout and reductions.
Ops recorded while a Graph is active build a tape in forward order;
``backward`` walks it in exact reverse and accumulates a gradient onto
every tensor reachable from the loss, parameters and intermediates
alike. Outside a recording context the same ops run as plain numpy.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "GraphError",
    "ShapeError",
    "Graph",
    "Tensor",
    "record",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "add_const",
    "mul_const",
    "reshape",
    "transpose",
    "relu",
    "softmax",
    "log_softmax",
    "layer_norm",
    "embedding",
    "dropout",
    "reduce_sum",
    "gather_last",
    "finite_diff_check",
]


class ShapeError(ValueError):
    """Operand shapes do not conform for an op."""

    def __init__(self, op: str, detail: str):
        super().__init__(f"{op}: {detail}")
        self.op = op


class GraphError(RuntimeError):
    """Computation-graph misuse: double backward, detached loss, nested tapes."""


class _Node:
    __slots__ = ("tensor", "parents", "backward_fn")

    def __init__(self, tensor: "Tensor", parents: tuple, backward_fn: Callable):
        self.tensor = tensor
        self.parents = parents
        self.backward_fn = backward_fn


class Graph:
    """Tape of op records in forward (hence topological) order.

    Construction order makes the node list acyclic by design; backward
    consumes the graph, so a second backward without a fresh forward
    pass is rejected.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False


_active: Graph | None = None


@contextmanager
def record(graph: Graph) -> Iterator[Graph]:
    """Record all ops executed in this context onto ``graph``."""
    global _active
    if _active is not None:
        raise GraphError("nested recording contexts are not supported")
    if graph.consumed:
        raise GraphError("graph already consumed by backward(); build a new one")
    _active = graph
    try:
        yield graph
    finally:
        _active = None


class Tensor:
    """Dense tensor; ``grad`` is populated by backward()."""

    __slots__ = ("data", "grad", "graph", "node_id")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.graph: Graph | None = None
        self.node_id: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return add(self, other)
        return add_const(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_const(self, -other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_const(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        return mul_const(self, 1.0 / other)

    def __neg__(self) -> "Tensor":
        return mul_const(self, -1.0)


def _emit(data: np.ndarray, parents: tuple, backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _active is not None:
        out.graph = _active
        out.node_id = len(_active.nodes)
        _active.nodes.append(_Node(out, parents, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) onto every tensor t reachable from ``loss``."""
    if loss.data.shape != ():
        raise GraphError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
    graph = loss.graph
    if graph is None:
        raise GraphError("loss is detached from any computation graph")
    if graph.consumed:
        raise GraphError("backward() already ran on this graph; run a new forward pass")
    graph.consumed = True
    loss.grad = np.ones((), dtype=loss.data.dtype)
    for node in reversed(graph.nodes):
        out_grad = node.tensor.grad
        if out_grad is None:
            continue
        for parent, pgrad in zip(node.parents, node.backward_fn(out_grad)):
            if pgrad is None:
                continue
            if parent.grad is None:
                parent.grad = pgrad
            else:
                parent.grad = parent.grad + pgrad


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", f"operands must have ndim >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", f"inner dimensions differ: {a.shape} @ {b.shape}")
    a_data, b_data = a.data, b.data
    a_shape, b_shape = a.shape, b.shape

    if b.ndim == 2 and a.ndim > 2:
        # flatten the stacked left operand into one big GEMM; numpy would
        # otherwise loop a tiny GEMM per batch row
        k, n = b_shape
        a2 = np.ascontiguousarray(a_data).reshape(-1, k)

        def bw2(g):
            g2 = np.ascontiguousarray(g).reshape(-1, n)
            ga = (g2 @ b_data.T).reshape(a_shape)
            gb = a2.T @ g2
            return ga, gb

        return _emit((a2 @ b_data).reshape(*a_shape[:-1], n), (a, b), bw2)

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b_data, -1, -2), a_shape)
        gb = _unbroadcast(np.swapaxes(a_data, -1, -2) @ g, b_shape)
        return ga, gb

    return _emit(a_data @ b_data, (a, b), bw)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, f"shapes do not broadcast: {a.shape} vs {b.shape}") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)
    a_shape, b_shape = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

    return _emit(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("sub", a, b)
    a_shape, b_shape = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, a_shape), -_unbroadcast(g, b_shape)

    return _emit(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("mul", a, b)
    a_data, b_data = a.data, b.data
    a_shape, b_shape = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g * b_data, a_shape), _unbroadcast(g * a_data, b_shape)

    return _emit(a_data * b_data, (a, b), bw)


def add_const(a: Tensor, c) -> Tensor:
    data = a.data + c
    if data.shape != a.shape:
        raise ShapeError("add_const", f"constant changes shape: {a.shape} -> {data.shape}")
    return _emit(data, (a,), lambda g: (g,))


def mul_const(a: Tensor, c) -> Tensor:
    data = a.data * c
    if data.shape != a.shape:
        raise ShapeError("mul_const", f"constant changes shape: {a.shape} -> {data.shape}")
    return _emit(data, (a,), lambda g: (g * c,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", f"cannot reshape {old} to {tuple(shape)}") from None
    return _emit(data, (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("transpose", f"axes {axes} invalid for ndim {a.ndim}")
    inverse = tuple(int(np.argsort(axes)[i]) for i in range(len(axes)))
    return _emit(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max subtraction).

    Entries of -inf are allowed as masks and get exactly zero weight;
    every slice along ``axis`` must keep at least one finite entry.
    """
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError("softmax", f"axis {axis} invalid for shape {a.shape}")
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    expd = np.exp(shifted)
    y = expd / np.sum(expd, axis=axis, keepdims=True)

    def bw(g):
        return ((g - np.sum(g * y, axis=axis, keepdims=True)) * y,)

    return _emit(y, (a,), bw)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError("log_softmax", f"axis {axis} invalid for shape {a.shape}")
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    y = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))

    def bw(g):
        return (g - np.exp(y) * np.sum(g, axis=axis, keepdims=True),)

    return _emit(y, (a,), bw)


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, eps in the denominator."""
    dim = x.shape[-1]
    for name, t in (("gain", gain), ("bias", bias)):
        if t is not None and t.shape != (dim,):
            raise ShapeError("layer_norm", f"{name} shape {t.shape} != ({dim},)")
    mean = np.mean(x.data, axis=-1, keepdims=True)
    centered = x.data - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat
    if gain is not None:
        out = out * gain.data
    if bias is not None:
        out = out + bias.data
    gain_data = None if gain is None else gain.data
    parents = tuple(t for t in (x, gain, bias) if t is not None)

    def bw(g):
        ghat = g if gain_data is None else g * gain_data
        dx = inv * (ghat - np.mean(ghat, axis=-1, keepdims=True)
                    - xhat * np.mean(ghat * xhat, axis=-1, keepdims=True))
        grads = [dx]
        if gain is not None:
            grads.append((g * xhat).reshape(-1, dim).sum(axis=0))
        if bias is not None:
            grads.append(g.reshape(-1, dim).sum(axis=0))
        return tuple(grads)

    return _emit(out, parents, bw)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ShapeError("embedding", f"ids must be integers, got dtype {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError("embedding", f"id out of range for table of {table.shape[0]} rows")
    vocab, dim = table.shape

    def bw(g):
        gt = np.zeros((vocab, dim), dtype=g.dtype)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, dim))
        return (gt,)

    return _emit(table.data[ids], (table,), bw)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: scales by 1/(1-p) at train time, identity when p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return _emit(x.data * mask, (x,), lambda g: (g * mask,))


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x_shape = x.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, x_shape).astype(g.dtype),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, x_shape).astype(g.dtype),)

    return _emit(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), bw)


def gather_last(x: Tensor, idx: np.ndarray) -> Tensor:
    """Pick idx[...]-th entry along the last axis; idx shape == x.shape[:-1]."""
    idx = np.asarray(idx)
    if idx.shape != x.shape[:-1]:
        raise ShapeError("gather_last", f"idx shape {idx.shape} != {x.shape[:-1]}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[-1]):
        raise ShapeError("gather_last", f"index out of range for last axis {x.shape[-1]}")
    expanded = idx[..., None]
    x_shape = x.shape

    def bw(g):
        gx = np.zeros(x_shape, dtype=g.dtype)
        np.put_along_axis(gx, expanded, g[..., None], axis=-1)
        return (gx,)

    return _emit(np.take_along_axis(x.data, expanded, axis=-1)[..., 0], (x,), bw)


# ---------------------------------------------------------------------------
# gradient oracle


def finite_diff_check(f: Callable[[Tensor], Tensor], point, h: float,
                      coords: Sequence[int] | None = None) -> float:
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` must be deterministic and return a scalar. Returns the max over
    (selected) coordinates of |analytic - numeric| / max(1e-12, |analytic| +
    |numeric|). ``coords`` restricts the check to the given flat indices of
    ``point``; by default every coordinate is checked.
    """
    if h <= 0:
        raise ValueError(f"step size h must be positive, got {h}")
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)

    x = Tensor(base.copy())
    with record(Graph()):
        y = f(x)
    backward(y)
    if x.grad is None:
        raise ValueError("f does not depend on the given point")
    analytic = x.grad.ravel()
    if not np.all(np.isfinite(analytic)) or not np.isfinite(y.item()):
        raise ValueError("non-finite values in f or its gradient")

    flat = base.ravel()
    indices = range(flat.size) if coords is None else coords
    max_err = 0.0
    for i in indices:
        saved = flat[i]
        flat[i] = saved + h
        fp = f(Tensor(base)).item()
        flat[i] = saved - h
        fm = f(Tensor(base)).item()
        flat[i] = saved
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite f value at coordinate {i}")
        numeric = (fp - fm) / (2.0 * h)
        a = analytic[i]
        err = abs(a - numeric) / max(1e-12, abs(a) + abs(numeric))
        max_err = max(max_err, err)
    return max_err
