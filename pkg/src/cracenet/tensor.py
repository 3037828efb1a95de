"""Dense float64 tensors with reverse-mode automatic differentiation.

Every value in this package is carried by a :class:`Tensor`: a contiguous
row-major float64 array, an optional gradient of the same shape, and a
record of the operation that produced it.  Recorded operations link into a
DAG; :func:`backward` walks that DAG exactly once in reverse topological
order and accumulates d(loss)/d(x) into every tensor that requires
gradients.

Tensors are immutable after creation except for their ``grad`` field.  A
graph and its tensors are confined to one thread for the duration of a
forward/backward pass; independent graphs may live on separate threads.
All reductions use numpy's fixed deterministic order, so identical seeds
and op sequences reproduce bit-identical data and gradients.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GraphError",
    "ShapeError",
    "as_tensor",
    "backward",
    "concat",
    "concat_channels",
    "crop2d",
    "exp",
    "log",
    "make_node",
    "pad_bottom_right",
    "relu",
    "sigmoid",
    "zero_grads",
]

# Smallest/largest values sigmoid may emit: the open interval (0, 1) is a
# hard contract even for saturating inputs.
_SIG_LO = np.finfo(np.float64).tiny
_SIG_HI = float(np.nextafter(1.0, 0.0))


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested op."""


class GraphError(RuntimeError):
    """The autodiff graph was used outside its contract."""


class Tensor:
    """N-dimensional float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- arithmetic ----------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    # -- shape ops -----------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape

        def bwd(g):
            return (np.ascontiguousarray(g).reshape(src),)

        return make_node(self.data.reshape(shape), (self,), bwd)

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))

        def bwd(g):
            return (g.transpose(inv),)

        return make_node(self.data.transpose(axes), (self,), bwd)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def clip(self, lo: float, hi: float) -> "Tensor":
        return clip(self, lo, hi)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def make_node(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    """Wrap a forward result, recording parents and a backward rule.

    ``backward_fn(upstream)`` must return one gradient array (or None) per
    parent.  Returned arrays may alias ``upstream``; the backward pass never
    mutates them in place.
    """
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise binary ops --------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return make_node(ad * bd, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data

    def bwd(g):
        return (
            _unbroadcast(g / bd, a.shape),
            _unbroadcast(-g * ad / (bd * bd), b.shape),
        )

    return make_node(ad / bd, (a, b), bwd)


def power(a, p) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    ad = a.data

    def bwd(g):
        return (g * p * ad ** (p - 1.0),)

    return make_node(ad**p, (a,), bwd)


# -- elementwise unary ops ---------------------------------------------


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)

    def bwd(g):
        return (g * y,)

    return make_node(y, (x,), bwd)


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data

    def bwd(g):
        return (g / xd,)

    return make_node(np.log(xd), (x,), bwd)


def sigmoid(x) -> Tensor:
    """Numerically stable logistic; outputs are strictly inside (0, 1)."""
    x = as_tensor(x)
    xd = x.data
    y = np.empty_like(xd)
    pos = xd >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    e = np.exp(xd[~pos])
    y[~pos] = e / (1.0 + e)
    np.clip(y, _SIG_LO, _SIG_HI, out=y)

    def bwd(g):
        return (g * y * (1.0 - y),)

    return make_node(y, (x,), bwd)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def bwd(g):
        return (g * mask,)

    return make_node(np.where(mask, x.data, 0.0), (x,), bwd)


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes through the unclamped region only."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)

    def bwd(g):
        return (g * inside,)

    return make_node(np.clip(x.data, lo, hi), (x,), bwd)


# -- reductions ---------------------------------------------------------


def _restore_axes(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def bwd(g):
        return (_restore_axes(g, shape, axis, keepdims),)

    return make_node(x.data.sum(axis=axis, keepdims=keepdims), (x,), bwd)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = 1
        for ax in axes:
            count *= shape[ax]
    inv = 1.0 / count

    def bwd(g):
        return (_restore_axes(g * inv, shape, axis, keepdims),)

    return make_node(x.data.mean(axis=axis, keepdims=keepdims), (x,), bwd)


# -- concatenation and 2-D padding/cropping -----------------------------


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of zero tensors")
    base = list(ts[0].shape)
    for t in ts[1:]:
        other = list(t.shape)
        if len(other) != len(base):
            raise ShapeError(f"concat: rank mismatch {ts[0].shape} vs {t.shape}")
        for d, (i, j) in enumerate(zip(base, other)):
            if d != (axis % len(base)) and i != j:
                raise ShapeError(
                    f"concat: dim {d} differs ({ts[0].shape} vs {t.shape}) off the concat axis"
                )
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        sl = [slice(None)] * g.ndim
        outs = []
        for i in range(len(ts)):
            sl[axis] = slice(offsets[i], offsets[i + 1])
            outs.append(g[tuple(sl)])
        return tuple(outs)

    return make_node(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), bwd)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate 4-D feature maps along the channel axis."""
    for t in tensors:
        if as_tensor(t).ndim != 4:
            raise ShapeError("concat_channels expects (B, C, H, W) tensors")
    return concat(tensors, axis=1)


def pad_bottom_right(x: Tensor, pad_h: int, pad_w: int) -> Tensor:
    """Zero-pad the bottom/right spatial edges of a (B, C, H, W) tensor."""
    x = as_tensor(x)
    if pad_h == 0 and pad_w == 0:
        return x
    B, C, H, W = x.shape

    def bwd(g):
        return (g[:, :, :H, :W],)

    data = np.pad(x.data, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)))
    return make_node(data, (x,), bwd)


def crop2d(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left height x width window of a (B, C, H, W) tensor."""
    x = as_tensor(x)
    B, C, H, W = x.shape
    if height == H and width == W:
        return x

    def bwd(g):
        out = np.zeros((B, C, H, W))
        out[:, :, :height, :width] = g
        return (out,)

    return make_node(np.ascontiguousarray(x.data[:, :, :height, :width]), (x,), bwd)


# -- backward pass -------------------------------------------------------


def zero_grads(tensors: Iterable[Tensor]) -> None:
    """Reset gradients to zero arrays (backward accumulates with +=)."""
    for t in tensors:
        t.grad = np.zeros_like(t.data)


def backward(loss: Tensor) -> None:
    """Populate d(loss)/dx for every tensor reachable from ``loss``.

    ``loss`` must be a scalar (size 1).  Repeated calls without
    :func:`zero_grads` accumulate into existing gradients.
    """
    if not isinstance(loss, Tensor):
        raise GraphError("backward expects a Tensor")
    if loss.size != 1:
        raise GraphError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # Iterative post-order DFS: parents land before children, so the
    # reversed order visits each node exactly once with its full upstream.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    upstream: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = upstream.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad = node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in upstream:
                # Fresh allocation: stored arrays may alias other entries.
                upstream[key] = upstream[key] + pg
            else:
                upstream[key] = pg
