"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` whenever
one of their inputs requires gradients.  Outside of a ``with Tape():`` block
nothing is recorded, which doubles as a no-grad mode for evaluation.

Example::

    w = Tensor([1.0, -2.0], requires_grad=True)
    with Tape() as tape:
        loss = tsum(w * w)
    tape.backward(loss)
    w.grad  # array([ 2., -4.])
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "relu",
    "concat",
    "tsum",
    "tmax",
    "tmean",
    "log_softmax",
    "softmax",
    "take",
    "slice_axis",
    "reshape",
    "transpose",
    "forward_op",
    "cross_entropy",
    "backward",
]


class ShapeError(ValueError):
    """Raised when operand shapes are not conformable for an operation."""

    def __init__(self, op: str, *shapes: tuple[int, ...], detail: str = ""):
        self.op = op
        self.shapes = shapes
        shown = " and ".join(str(tuple(s)) for s in shapes)
        msg = f"{op}: incompatible shapes {shown}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class Tensor:
    """A float64 array that can take part in gradient recording."""

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / float(other))
        raise TypeError("only division by a scalar is supported")

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __getitem__(self, key):
        return _getitem(self, key)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_TAPES: list["Tape"] = []


class Tape:
    """Append-only record of differentiable operations.

    Nodes are appended in execution order, so the list is already a
    topological order of the computation.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def record(self, node: _Node) -> None:
        self.nodes.append(node)

    def backward(self, loss: Tensor, accumulate: bool = False) -> None:
        backward(loss, self, accumulate=accumulate)


def _record(op, inputs, out_data, rule) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.name = None
    out.requires_grad = needs and bool(_TAPES)
    if out.requires_grad:
        _TAPES[-1].record(_Node(op, tuple(inputs), out, rule))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", (a, b), a.data + b.data, rule)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("sub", a, b)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", (a, b), a.data - b.data, rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product with numpy broadcasting."""
    _broadcast_shape("mul", a, b)

    def rule(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record("mul", (a, b), a.data * b.data, rule)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record("scale", (a,), a.data * c, lambda g: (g * c,))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product following ``np.matmul`` broadcasting.

    Both operands need at least two dimensions.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape, detail="batch dims") from None

    if b.ndim == 2 and a.ndim > 2:
        return _matmul_right2d(a, b)
    if a.ndim == 2 and b.ndim > 2:
        return _matmul_left2d(a, b)

    def rule(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record("matmul", (a, b), a.data @ b.data, rule)


def _matmul_right2d(a: Tensor, b: Tensor) -> Tensor:
    # [..., m, k] @ [k, n] as one flat GEMM
    k, n = b.shape
    a2 = a.data.reshape(-1, k)
    out = (a2 @ b.data).reshape(a.shape[:-1] + (n,))

    def rule(g):
        g2 = g.reshape(-1, n)
        return (g2 @ b.data.T).reshape(a.shape), a2.T @ g2

    return _record("matmul", (a, b), out, rule)


def _matmul_left2d(a: Tensor, b: Tensor) -> Tensor:
    # [m, k] @ [..., k, n]: contract over axis -2 of b with one GEMM
    m, k = a.shape
    bt = np.moveaxis(b.data, -2, 0)
    rest = bt.shape[1:]
    b2 = bt.reshape(k, -1)
    out = np.moveaxis((a.data @ b2).reshape((m,) + rest), 0, -2)

    def rule(g):
        g2 = np.moveaxis(g, -2, 0).reshape(m, -1)
        gb = np.moveaxis((a.data.T @ g2).reshape((k,) + rest), 0, -2)
        return g2 @ b2.T, gb

    return _record("matmul", (a, b), out, rule)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise ShapeError("concat", ref, t.shape)
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _record("concat", tensors, np.concatenate([t.data for t in tensors], axis=ax), rule)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", old, tuple(shape)) from None
    return _record("reshape", (a,), out, lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record("transpose", (a,), np.transpose(a.data, axes), lambda g: (np.transpose(g, inv),))


def take(a: Tensor, indices, axis: int) -> Tensor:
    """Gather entries along ``axis``; repeated indices accumulate gradient."""
    idx = np.asarray(indices, dtype=np.intp)
    ax = axis % a.ndim
    n = a.shape[ax]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise ShapeError("take", a.shape, idx.shape, detail=f"index out of range on axis {ax}")
    shape = a.shape

    def rule(g):
        gz = np.zeros((shape[ax],) + shape[:ax] + shape[ax + 1:])
        np.add.at(gz, idx, np.moveaxis(g, ax, 0))
        return (np.moveaxis(gz, 0, ax),)

    return _record("take", (a,), np.take(a.data, idx, axis=ax), rule)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    ax = axis % a.ndim
    if not 0 <= start < stop <= a.shape[ax]:
        raise ShapeError("slice", a.shape, detail=f"[{start}:{stop}] on axis {ax}")
    key = [slice(None)] * a.ndim
    key[ax] = slice(start, stop)
    return _getitem(a, tuple(key), op="slice")


def _getitem(a: Tensor, key, op: str = "getitem") -> Tensor:
    shape = a.shape

    def rule(g):
        gz = np.zeros(shape)
        np.add.at(gz, key, g)
        return (gz,)

    return _record(op, (a,), np.array(a.data[key]), rule)


# ---------------------------------------------------------------------------
# reductions


def _check_axis(op: str, a: Tensor, axis) -> tuple[int, ...]:
    axes = tuple(range(a.ndim)) if axis is None else (axis if isinstance(axis, tuple) else (axis,))
    norm = tuple(ax % a.ndim for ax in axes) if a.ndim else ()
    for ax in norm:
        if a.shape[ax] == 0:
            raise ShapeError(op, a.shape, detail=f"empty reduction axis {ax}")
    if axis is None and a.size == 0:
        raise ShapeError(op, a.shape, detail="empty tensor")
    return norm


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _check_axis("sum", a, axis)
    shape = a.shape

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", (a,), a.data.sum(axis=axes, keepdims=keepdims), rule)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _check_axis("mean", a, axis)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def tmax(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; the gradient goes to the first maximal entry."""
    (ax,) = _check_axis("max", a, axis)
    arg = np.expand_dims(np.argmax(a.data, axis=ax), ax)
    out = np.take_along_axis(a.data, arg, axis=ax)
    shape = a.shape

    def rule(g):
        gz = np.zeros(shape)
        gk = g if keepdims else np.expand_dims(g, ax)
        np.put_along_axis(gz, arg, gk, axis=ax)
        return (gz,)

    return _record("max", (a,), out if keepdims else np.squeeze(out, axis=ax), rule)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    (ax,) = _check_axis("log_softmax", a, axis)
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=ax, keepdims=True))
    probs = np.exp(out)

    def rule(g):
        return (g - probs * g.sum(axis=ax, keepdims=True),)

    return _record("log_softmax", (a,), out, rule)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    (ax,) = _check_axis("softmax", a, axis)
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=ax, keepdims=True)

    def rule(g):
        return (probs * (g - (g * probs).sum(axis=ax, keepdims=True)),)

    return _record("softmax", (a,), probs, rule)


_KINDS: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "elementwise-multiply": mul,
    "scalar-scale": scale,
    "relu": relu,
    "concat": lambda *ts, axis=-1: concat(ts, axis=axis),
    "sum-reduce": tsum,
    "max-reduce": tmax,
    "mean-reduce": tmean,
    "log-softmax": log_softmax,
    "slice": slice_axis,
}


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch a primitive by its kind name, e.g. ``forward_op("relu", x)``."""
    try:
        fn = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}; expected one of {sorted(_KINDS)}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# losses


def cross_entropy(logits: Tensor, labels, active_mask=None) -> Tensor:
    """Mean negative log-likelihood with softmax over the active classes only.

    Args:
        logits: ``[batch, classes]`` scores.
        labels: integer class ids, one per row.
        active_mask: boolean vector over classes; ``None`` means all active.

    Inactive logits are dropped before the softmax, so the result equals the
    unmasked loss on the column-restricted logits.
    """
    if logits.ndim != 2:
        raise ShapeError("cross_entropy", logits.shape, detail="expected [batch, classes]")
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    batch, n_classes = logits.shape
    if batch < 1 or labels.shape[0] != batch:
        raise ShapeError("cross_entropy", logits.shape, labels.shape)
    if active_mask is None:
        active = np.arange(n_classes)
    else:
        mask = np.asarray(active_mask, dtype=bool)
        if mask.shape != (n_classes,):
            raise ShapeError("cross_entropy", logits.shape, mask.shape, detail="mask length")
        active = np.flatnonzero(mask)
    if active.size == 0:
        raise ValueError("cross_entropy: no active classes")
    pos = np.searchsorted(active, labels)
    bad = (pos >= active.size) | (active[np.minimum(pos, active.size - 1)] != labels)
    if bad.any():
        raise ValueError(f"cross_entropy: labels {sorted(set(labels[bad].tolist()))} are not active")
    sub_logits = logits if active.size == n_classes else take(logits, active, axis=1)
    onehot = np.zeros((batch, active.size))
    onehot[np.arange(batch), pos] = 1.0
    picked = tsum(mul(log_softmax(sub_logits, axis=1), Tensor(onehot)))
    return scale(picked, -1.0 / batch)


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor, tape: Tape, accumulate: bool = False) -> None:
    """Populate ``.grad`` on every leaf tensor that requires gradients.

    With ``accumulate=False`` leaf gradients are overwritten, so replaying the
    same tape twice gives identical results.
    """
    if loss.size != 1:
        raise ShapeError("backward", loss.shape, detail="loss must be scalar")
    produced = {id(n.output) for n in tape.nodes}
    if id(loss) not in produced and not loss.requires_grad:
        raise ValueError("backward: loss was not recorded on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    leaves: dict[int, Tensor] = {}
    if id(loss) not in produced:
        leaves[id(loss)] = loss
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in produced:
                leaves[key] = inp
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64).reshape(leaf.shape)
        if accumulate and leaf.grad is not None:
            leaf.grad = leaf.grad + g
        else:
            leaf.grad = g.copy()


def parameters_grad_vector(params: Iterable[Tensor]) -> np.ndarray:
    """Concatenate the gradients of ``params`` into one flat vector."""
    return np.concatenate([np.zeros(p.size) if p.grad is None else p.grad.ravel() for p in params])
