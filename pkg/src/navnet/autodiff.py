"""Tape-based reverse-mode automatic differentiation over float64 numpy arrays.

Every differentiable value is a :class:`Tensor`. Tensors created through
:meth:`Graph.param` are leaves; operations on tensors that belong to a graph
append one record to that graph's tape. Tensors without a graph are constants
and operations on constants only compute values.

Ops accept an optional leading batch axis wherever it is natural (conv2d works
on ``[H, W, C]`` or ``[B, H, W, C]``; fully_connected on ``[n]`` or ``[B, n]``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError

__all__ = [
    "Graph",
    "Tensor",
    "constant",
    "conv2d",
    "max_over_group",
    "fully_connected",
    "add",
    "sub",
    "mul",
    "relu",
    "sigmoid",
    "tanh",
    "pointwise",
    "scale",
    "add_bias",
    "softmax",
    "reduce_sum",
    "normalize_sum",
    "reshape",
    "transpose",
    "flip",
    "concat",
    "broadcast_to",
    "gather_last",
    "einsum2",
    "cross_entropy",
]


@dataclass
class _Node:
    op: str
    inputs: tuple[int, ...]
    # maps output gradient to one gradient per input (None = no contribution)
    vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None
    shape: tuple[int, ...]


@dataclass
class Graph:
    """Append-only tape. Insertion order is a topological order."""

    nodes: list[_Node] = field(default_factory=list)
    leaves: list[int] = field(default_factory=list)

    def param(self, value, name: str | None = None) -> "Tensor":
        data = np.array(value, dtype=np.float64)
        node_id = len(self.nodes)
        self.nodes.append(_Node(name or "leaf", (), None, data.shape))
        self.leaves.append(node_id)
        return Tensor(data, node_id, self)

    def _record(self, op, data, inputs, vjp) -> "Tensor":
        node_id = len(self.nodes)
        self.nodes.append(_Node(op, tuple(t.node_id for t in inputs), vjp, data.shape))
        return Tensor(data, node_id, self)

    def backward(self, loss: "Tensor") -> dict[int, np.ndarray]:
        """Gradients of scalar ``loss`` for every node on the tape up to it.

        Leaves that do not influence the loss get zero arrays.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.graph is not self or loss.node_id is None:
            raise ShapeError("loss is not recorded on this graph")
        grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for nid in range(loss.node_id, -1, -1):
            g = grads.get(nid)
            node = self.nodes[nid]
            if g is None or node.vjp is None:
                continue
            in_grads = node.vjp(g)
            for inp, ig in zip(node.inputs, in_grads):
                if inp is None or ig is None:
                    continue
                prev = grads.get(inp)
                grads[inp] = ig if prev is None else prev + ig
        for leaf in self.leaves:
            if leaf not in grads:
                grads[leaf] = np.zeros(self.nodes[leaf].shape)
        return grads


class Tensor:
    __slots__ = ("data", "node_id", "graph")
    __array_priority__ = 100

    def __init__(self, data, node_id: int | None = None, graph: Graph | None = None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.node_id = node_id
        self.graph = graph

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> list[float]:
        return self.data.ravel().tolist()

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, node={self.node_id})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def constant(value) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _graph_of(*tensors: Tensor) -> Graph | None:
    graph = None
    for t in tensors:
        if t.graph is not None:
            if graph is not None and t.graph is not graph:
                raise ValueError("tensors belong to different graphs")
            graph = t.graph
    return graph


def _emit(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    graph = _graph_of(*inputs)
    if graph is None:
        return Tensor(data)
    return graph._record(op, data, inputs, vjp)


def _same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# convolution


def _conv_forward(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    ks = k.shape[0]
    p = ks // 2
    pad = [(0, 0)] * (x.ndim - 3) + [(p, p), (p, p), (0, 0)]
    xp = np.pad(x, pad)
    # windows: [..., H, W, Cin, k, k]
    win = sliding_window_view(xp, (ks, ks), axis=(-3, -2))
    return np.tensordot(win, k, axes=([-3, -2, -1], [2, 0, 1]))


def conv2d(x: Tensor, kernel: Tensor) -> Tensor:
    """Stride-1 convolution with zero 'same' padding.

    ``out[y, x, co] = sum input[y+dy-k//2, x+dx-k//2, ci] * kernel[dy, dx, ci, co]``
    """
    k = kernel.data
    if k.ndim != 4 or k.shape[0] != k.shape[1]:
        raise ShapeError(f"conv2d kernel must be [k, k, Cin, Cout], got {k.shape}")
    if k.shape[0] % 2 == 0:
        raise ConfigError(f"conv2d kernel size must be odd, got {k.shape[0]}")
    if x.data.ndim not in (3, 4) or x.shape[-1] != k.shape[2]:
        raise ShapeError(f"conv2d input {x.shape} does not match kernel {k.shape}")
    xd = x.data
    out = _conv_forward(xd, k)

    def vjp(g):
        # adjoint of a same-padded correlation is the flipped, transposed kernel
        gx = _conv_forward(g, k[::-1, ::-1].transpose(0, 1, 3, 2))
        ks = k.shape[0]
        p = ks // 2
        pad = [(0, 0)] * (xd.ndim - 3) + [(p, p), (p, p), (0, 0)]
        win = sliding_window_view(np.pad(xd, pad), (ks, ks), axis=(-3, -2))
        lead = tuple(range(g.ndim - 1))
        gk = np.tensordot(win, g, axes=(lead, lead))  # [Cin, k, k, Cout]
        return gx, gk.transpose(1, 2, 0, 3)

    return _emit("conv2d", out, (x, kernel), vjp)


# ---------------------------------------------------------------------------
# reductions and structure


def max_over_group(x: Tensor, group_size: int) -> Tensor:
    """Max over consecutive channel groups: channel ``c*G + g`` belongs to group ``c``.

    Ties send the whole gradient to the lowest channel index.
    """
    C = x.shape[-1]
    if group_size < 1 or C % group_size:
        raise ShapeError(f"{C} channels not divisible by group size {group_size}")
    grouped = x.data.reshape(x.shape[:-1] + (C // group_size, group_size))
    idx = np.argmax(grouped, axis=-1)
    out = np.take_along_axis(grouped, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        gx = np.zeros_like(grouped)
        np.put_along_axis(gx, idx[..., None], g[..., None], axis=-1)
        return (gx.reshape(x.shape),)

    return _emit("max_over_group", out, (x,), vjp)


def fully_connected(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    W, b = weights.data, bias.data
    if W.ndim != 2 or x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],) or x.data.ndim > 2:
        raise ShapeError(f"fully_connected: input {x.shape}, weights {W.shape}, bias {b.shape}")
    xd = x.data
    out = xd @ W + b

    def vjp(g):
        if xd.ndim == 1:
            return g @ W.T, np.outer(xd, g), g
        return g @ W.T, xd.T @ g, g.sum(axis=0)

    return _emit("fully_connected", out, (x, weights, bias), vjp)


def reduce_sum(x: Tensor, axes: Sequence[int] | None = None, keepdims: bool = False) -> Tensor:
    nd = x.data.ndim
    if axes is None:
        axes = tuple(range(nd))
    axes = tuple(axes)
    for a in axes:
        if not -nd <= a < nd:
            raise ShapeError(f"axis {a} out of range for shape {x.shape}")
    if not axes:
        return x
    axes = tuple(sorted(a % nd for a in axes))
    out = x.data.sum(axis=axes, keepdims=keepdims)
    shape = x.shape

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("reduce_sum", np.asarray(out, dtype=np.float64), (x,), vjp)


def normalize_sum(x: Tensor, axes: Sequence[int]) -> Tensor:
    """Divide ``x`` by its sum over ``axes`` (the eta factor of a Bayes update)."""
    axes = tuple(axes)
    s = x.data.sum(axis=axes, keepdims=True)
    y = x.data / s

    def vjp(g):
        return ((g - (g * y).sum(axis=axes, keepdims=True)) / s,)

    return _emit("normalize_sum", y, (x,), vjp)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as e:
        raise ShapeError(str(e)) from None
    return _emit("reshape", out, (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _emit("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def flip(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    return _emit("flip", np.flip(x.data, axes).copy(), (x,), lambda g: (np.flip(g, axes).copy(),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _emit("concat", out, tuple(tensors), vjp)


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Repeat size-1 axes of ``x`` (same rank) up to ``shape``."""
    shape = tuple(shape)
    if x.data.ndim != len(shape):
        raise ShapeError(f"broadcast_to needs equal rank: {x.shape} -> {shape}")
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError as e:
        raise ShapeError(str(e)) from None
    axes = tuple(i for i, (a, b) in enumerate(zip(x.shape, shape)) if a != b)

    def vjp(g):
        return (g.sum(axis=axes, keepdims=True),)

    return _emit("broadcast_to", out, (x,), vjp)


def gather_last(x: Tensor, index: np.ndarray) -> Tensor:
    """Pick channels along the last axis with a per-batch index table.

    ``x`` is ``[B, ..., C]`` and ``index`` is an int array ``[B, k]``; the result
    is ``[B, ..., k]`` with ``out[b, ..., j] = x[b, ..., index[b, j]]``.
    """
    index = np.asarray(index, dtype=np.intp)
    B = x.shape[0]
    if index.ndim != 2 or index.shape[0] != B:
        raise ShapeError(f"gather_last index {index.shape} does not match batch {B}")
    mid = x.data.ndim - 2
    idx = index.reshape((B,) + (1,) * mid + (index.shape[1],))
    idx = np.broadcast_to(idx, x.shape[:-1] + (index.shape[1],))
    out = np.take_along_axis(x.data, idx, axis=-1)
    onehot = np.zeros((B, index.shape[1], x.shape[-1]))
    np.put_along_axis(onehot, index[..., None], 1.0, axis=-1)

    def vjp(g):
        # repeated indices accumulate through the one-hot contraction
        return (np.einsum("b...k,bkc->b...c", g, onehot),)

    return _emit("gather_last", out, (x,), vjp)


def einsum2(spec: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum; every input index must appear in the output or the other input."""
    ins, out_s = spec.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for own, other in ((sa, sb), (sb, sa)):
        if any(c not in out_s and c not in other for c in own):
            raise ShapeError(f"einsum2 does not support lone summed index in {spec}")
    try:
        out = np.einsum(spec, a.data, b.data)
    except ValueError as e:
        raise ShapeError(str(e)) from None
    ad, bd = a.data, b.data

    def vjp(g):
        return (
            np.einsum(f"{out_s},{sb}->{sa}", g, bd),
            np.einsum(f"{out_s},{sa}->{sb}", g, ad),
        )

    return _emit("einsum", np.asarray(out, dtype=np.float64), (a, b), vjp)


# ---------------------------------------------------------------------------
# pointwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x: Tensor, c: float) -> Tensor:
    return _emit("scale", x.data * c, (x,), lambda g: (g * c,))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """``x[..., c] + bias[c]``."""
    if bias.data.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"add_bias: {x.shape} vs bias {bias.shape}")
    lead = tuple(range(x.data.ndim - 1))
    return _emit("add_bias", x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=lead)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    xd = x.data
    e = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _emit("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


_POINTWISE = {"add": add, "multiply": mul, "relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def pointwise(op_kind: str, *args: Tensor) -> Tensor:
    try:
        fn = _POINTWISE[op_kind]
    except KeyError:
        raise ConfigError(f"unknown pointwise op {op_kind!r}") from None
    return fn(*args)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", y, (x,), vjp)


def cross_entropy(logits: Tensor, targets: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Weighted sum of softmax cross-entropy over rows of ``logits`` ``[n, A]``."""
    targets = np.asarray(targets, dtype=np.intp)
    if logits.data.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape}, targets {targets.shape}")
    w = np.ones(len(targets)) if weights is None else np.asarray(weights, dtype=np.float64)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(targets))
    nll = lse - z[rows, targets]
    out = np.asarray(float((w * nll).sum()))

    def vjp(g):
        p = np.exp(z - lse[:, None])
        p[rows, targets] -= 1.0
        return (g * w[:, None] * p,)

    return _emit("cross_entropy", out, (logits,), vjp)
