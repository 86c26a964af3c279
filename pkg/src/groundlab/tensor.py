"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation is a module-level function that computes its
forward value with numpy and registers a closure that maps the output
gradient to input gradients. ``backward`` walks the graph once in reverse
topological order.

Leading (batch) dimensions are supported by the matrix operations as long as
they agree exactly; the only implicit broadcast is bias-add over the last
dimension.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Sequence

import numpy as np

# Stands in for -inf in additive attention masks.
MASK_SENTINEL = -1e30
# Entries at or below this are treated as masked.
_MASKED_BELOW = -1e29
LAYER_NORM_EPS = 1e-5

_ids = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class Tensor:
    """A node in a differentiation graph.

    ``data`` is always a C-contiguous float64 array. ``grad`` is populated by
    :func:`backward` for leaves created with ``requires_grad=True``.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        # ascontiguousarray would promote 0-d scalars to shape (1,)
        self.data = arr if arr.flags.c_contiguous else arr.copy(order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id = next(_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other, self))

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return constant(np.broadcast_to(np.asarray(value, dtype=np.float64), like.shape))


def constant(data) -> Tensor:
    return Tensor(data)


def parameter(data, name: str | None = None) -> Tensor:
    # own copy, so optimiser updates never alias caller arrays
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (inference)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _node(data: np.ndarray, parents: tuple[Tensor, ...], fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = fn
    return out


# --------------------------------------------------------------------------
# graph traversal
# --------------------------------------------------------------------------

def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and parent.node_id not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf.

    Interior gradients live only for the duration of the call, so running
    backward twice on the same graph adds the same leaf gradients twice.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent.node_id)
            grads[parent.node_id] = pg if prev is None else prev + pg


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------

def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _sum_to_last(g: np.ndarray, n: int) -> np.ndarray:
    return g.reshape(-1, n).sum(axis=0)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a bias vector over the last axis."""
    if a.shape == b.shape:
        return _node(a.data + b.data, (a, b), lambda g: (g, g))
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        n = b.shape[0]
        return _node(a.data + b.data, (a, b), lambda g: (g, _sum_to_last(g, n)))
    raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same("sub", a, b)
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same("mul", a, b)
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    on = a.data > 0
    return _node(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def sigmoid(a: Tensor) -> Tensor:
    s = _stable_sigmoid(a.data)
    return _node(s, (a,), lambda g: (g * s * (1.0 - s),))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


# --------------------------------------------------------------------------
# shape manipulation
# --------------------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from exc
    return _node(out, (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ShapeError(f"transpose needs ndim >= 2, got shape {a.shape}")
    return _node(np.swapaxes(a.data, -1, -2).copy(), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def concat_last_dim(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_last_dim: nothing to concatenate")
    lead = parts[0].shape[:-1]
    for p in parts:
        if p.shape[:-1] != lead:
            raise ShapeError(
                "concat_last_dim: leading shapes differ: " + ", ".join(str(q.shape) for q in parts)
            )
    sizes = [p.shape[-1] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def fn(g):
        return tuple(np.split(g, cuts, axis=-1))

    return _node(np.concatenate([p.data for p in parts], axis=-1), tuple(parts), fn)


def expand_batch(a: Tensor, batch: int) -> Tensor:
    """Stack ``batch`` copies of ``a`` along a new leading axis."""
    out = np.broadcast_to(a.data, (batch,) + a.shape).copy()
    return _node(out, (a,), lambda g: (g.sum(axis=0),))


def take_rows(table: Tensor, ids) -> Tensor:
    """Gather rows of a 2-D table; ``ids`` may have any integer shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"take_rows: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"take_rows: id out of range [0, {table.shape[0]})")
    shape = table.shape

    def fn(g):
        out = np.zeros(shape)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (out,)

    return _node(table.data[ids], (table,), fn)


# --------------------------------------------------------------------------
# reductions
# --------------------------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _node(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def weighted_sum(a: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(a * weights)`` with constant weights."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != a.shape:
        raise ShapeError(f"weighted_sum: weights {w.shape} vs tensor {a.shape}")
    return _node(np.array((a.data * w).sum()), (a,), lambda g: (w * float(g),))


def mean_pool_rows(a: Tensor, row_mask: np.ndarray | None = None) -> Tensor:
    """Average over the second-to-last axis, optionally over masked-in rows only.

    ``row_mask`` has shape ``a.shape[:-1]`` with 1 for rows that count.
    """
    if a.ndim < 2:
        raise ShapeError(f"mean_pool_rows needs ndim >= 2, got {a.shape}")
    if row_mask is None:
        row_mask = np.ones(a.shape[:-1])
    m = np.asarray(row_mask, dtype=np.float64)
    if m.shape != a.shape[:-1]:
        raise ShapeError(f"mean_pool_rows: mask {m.shape} vs rows {a.shape[:-1]}")
    counts = m.sum(axis=-1, keepdims=True)
    if np.any(counts == 0):
        raise ValueError("mean_pool_rows: a row group has no members")
    w = (m / counts)[..., None]
    return _node((a.data * w).sum(axis=-2), (a,), lambda g: (g[..., None, :] * w,))


def l2_norm_rows(a: Tensor) -> Tensor:
    """Euclidean norm over the last axis. The gradient at a zero row is 0."""
    n = np.sqrt((a.data * a.data).sum(axis=-1))
    safe = np.where(n > 0, n, 1.0)

    def fn(g):
        unit = np.where((n > 0)[..., None], a.data / safe[..., None], 0.0)
        return (g[..., None] * unit,)

    return _node(n, (a,), fn)


# --------------------------------------------------------------------------
# linear algebra
# --------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes must match."""
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
        raise ShapeError(f"matmul: operands {a.shape} and {b.shape} need equal rank >= 2")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: cannot multiply {a.shape} by {b.shape} "
            f"(inner {a.shape[-1]} vs {b.shape[-2]}, batch {a.shape[:-2]} vs {b.shape[:-2]})"
        )
    ad, bd = a.data, b.data

    def fn(g):
        return (g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g)

    return _node(ad @ bd, (a, b), fn)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` applied over the last axis of ``x`` (any leading shape)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not fit weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} does not fit weight {w.shape}")
    xd, wd = x.data, w.data
    x2 = xd.reshape(-1, wd.shape[0])
    out = x2 @ wd
    if b is not None:
        out = out + b.data
    out = out.reshape(xd.shape[:-1] + (wd.shape[1],))

    def fn(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(xd.shape)
        gw = x2.T @ g2
        if b is None:
            return (gx, gw)
        return (gx, gw, g2.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, fn)


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
               eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then apply the optional affine map."""
    d = x.shape[-1]
    for p in (gamma, beta):
        if p is not None and p.shape != (d,):
            raise ShapeError(f"layer_norm: affine param {p.shape} vs features {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data

    def fn(g):
        gh = g * gamma.data if gamma is not None else g
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        if gamma is not None:
            grads.append(_sum_to_last(g * xhat, d))
        if beta is not None:
            grads.append(_sum_to_last(g, d))
        return tuple(grads)

    parents = tuple(p for p in (x, gamma, beta) if p is not None)
    return _node(out, parents, fn)


# --------------------------------------------------------------------------
# attention and losses
# --------------------------------------------------------------------------

def masked_softmax(logits: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax of ``logits + mask`` over the last axis.

    ``mask`` holds 0 (keep) or :data:`MASK_SENTINEL` (drop) and must either
    match ``logits`` or its trailing dimensions. Masked entries come out as
    exactly 0.
    """
    z = logits.data
    dropped = None
    if mask is not None:
        m = np.asarray(mask, dtype=np.float64)
        if m.ndim == 0 or m.ndim > z.ndim or m.shape != z.shape[z.ndim - m.ndim:]:
            raise ShapeError(f"masked_softmax: mask {m.shape} vs logits {z.shape}")
        dropped = np.broadcast_to(m <= _MASKED_BELOW, z.shape)
        if np.any(dropped.all(axis=-1)):
            raise ValueError("masked_softmax: a row is fully masked")
        z = z + m
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    if dropped is not None:
        e = np.where(dropped, 0.0, e)
    p = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _node(p, (logits,), fn)


def log_softmax(logits: Tensor) -> Tensor:
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(out)
    return _node(out, (logits,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Weighted sum over rows of ``-log softmax(logits)[target]``.

    ``logits`` is (rows, classes); ``weights`` defaults to 1/rows (a mean).
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be 2-D, got {logits.shape}")
    rows, classes = logits.shape
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if t.shape != (rows,):
        raise ShapeError(f"cross_entropy: {t.shape[0]} targets for {rows} rows")
    if np.any(t < 0) or np.any(t >= classes):
        raise IndexError(f"cross_entropy: target out of range [0, {classes})")
    w = np.full(rows, 1.0 / rows) if weights is None else np.asarray(weights, dtype=np.float64)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    nll = lse - z[np.arange(rows), t]
    p = np.exp(z - lse[:, None])

    def fn(g):
        d = p.copy()
        d[np.arange(rows), t] -= 1.0
        return (d * (w * float(g))[:, None],)

    return _node(np.array((w * nll).sum()), (logits,), fn)


def bce_with_logits(logits: Tensor, labels, weights) -> Tensor:
    """Scalar ``sum(weights * BCE(sigmoid(logits), labels))``."""
    y = np.asarray(labels, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if y.shape != logits.shape or w.shape != logits.shape:
        raise ShapeError(
            f"bce_with_logits: logits {logits.shape}, labels {y.shape}, weights {w.shape}"
        )
    x = logits.data
    # log(1 + e^x) - y x, written to stay finite for large |x|
    per = np.logaddexp(0.0, x) - y * x
    s = _stable_sigmoid(x)
    return _node(np.array((w * per).sum()), (logits,), lambda g: (w * (s - y) * float(g),))
