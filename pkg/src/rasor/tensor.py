"""Dense tensors with tape-based reverse-mode automatic differentiation.

Every differentiable operation appends its output node to the calling
thread's :class:`Graph`.  Creation order is a topological order, so
:func:`backward` only has to walk the tape once in reverse.  The tape is
cleared after each backward pass.

Shapes never broadcast.  Row-wise bias addition and row repetition are
separate, explicit operations (:func:`add_bias`, :func:`repeat_rows`).
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

_ids = itertools.count()
_default_dtype = np.float32
_debug = False


class Graph:
    """Ordered record of operations built since the last backward pass."""

    def __init__(self):
        self.ops: list[Tensor] = []

    def __len__(self):
        return len(self.ops)

    def clear(self):
        self.ops = []


class _State(threading.local):
    def __init__(self):
        self.graph = Graph()
        self.enabled = True


_state = _State()


def current_graph() -> Graph:
    return _state.graph


def default_dtype():
    return _default_dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    global _default_dtype
    previous, _default_dtype = _default_dtype, np.dtype(dtype).type
    try:
        yield
    finally:
        _default_dtype = previous


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on this thread."""
    previous, _state.enabled = _state.enabled, False
    try:
        yield
    finally:
        _state.enabled = previous


@contextlib.contextmanager
def debug_checks(enabled: bool = True):
    """Assert that every op output is finite while the block runs."""
    global _debug
    previous, _debug = _debug, enabled
    try:
        yield
    finally:
        _debug = previous


class Tensor:
    """A numpy array that may take part in a computation graph.

    ``data`` holds the values (row-major), ``grad`` is filled for leaves that
    require gradients once :func:`backward` has run.
    """

    __slots__ = ("data", "grad", "requires_grad", "id", "op", "parents", "_backward")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype or _default_dtype)
        if 0 in arr.shape:
            raise DimensionError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.id = next(_ids)
        self.op = "leaf"
        self.parents = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return transpose(self)

    def sum(self):
        return sum_all(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def parameter(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


def zeros(shape, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or _default_dtype))


def ones(shape, dtype=None) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype or _default_dtype))


def _result(data: np.ndarray, parents: tuple, backward: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.id = next(_ids)
    out.op = op
    if _state.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out._backward = backward
        _state.graph.ops.append(out)
    else:
        out.requires_grad = False
        out.parents = ()
        out._backward = None
    if _debug and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite output from {op}")
    return out


def _check_same(op: str, a: Tensor, b: Tensor):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same("add", a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same("sub", a, b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same("mul", a, b)
    A, B = a.data, b.data
    return _result(A * B, (a, b), lambda g: (g * B, g * A), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * a.data.dtype.type(c), (a,), lambda g: (g * g.dtype.type(c),), "scale")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1 - y * y),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    # tanh form avoids exp overflow for large |x|
    y = 0.5 * (np.tanh(0.5 * a.data) + 1)
    return _result(y, (a,), lambda g: (g * y * (1 - y),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _result(y, (a,), lambda g: (g * y,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    return _result(np.log(x), (a,), lambda g: (g / x,), "log")


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), stable for large magnitudes."""
    x = a.data
    y = np.logaddexp(0, x)
    return _result(y, (a,), lambda g: (g * (0.5 * (np.tanh(0.5 * x) + 1)),), "softplus")


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation


def matmul(a: Tensor, b: Tensor) -> Tensor:
    A, B = a.data, b.data
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        return (g @ B.T if a.requires_grad else None, A.T @ g if b.requires_grad else None)

    return _result(A @ B, (a, b), backward, "matmul")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add the vector ``b`` (n,) to every row of ``x`` (m, n)."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias: {x.shape} and {b.shape}")
    return _result(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)), "add_bias")


def repeat_rows(x: Tensor, m: int) -> Tensor:
    """Stack ``m`` copies of a single-row tensor (1, n) into (m, n)."""
    if x.data.ndim != 2 or x.shape[0] != 1:
        raise DimensionError(f"repeat_rows expects shape (1, n), got {x.shape}")
    if m < 1:
        raise DimensionError("repeat_rows: row count must be positive")
    return _result(np.repeat(x.data, m, axis=0), (x,),
                   lambda g: (g.sum(axis=0, keepdims=True),), "repeat_rows")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got {a.shape}")
    return _result(a.data.T, (a,), lambda g: (g.T,), "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    src = a.data.shape
    try:
        y = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {src} as {shape}") from exc
    return _result(y, (a,), lambda g: (g.reshape(src),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    ndim = tensors[0].data.ndim
    for t in tensors:
        if t.data.ndim != ndim:
            raise DimensionError(f"concat: rank mismatch {tensors[0].shape} vs {t.shape}")
        for ax in range(ndim):
            if ax != axis % ndim and t.shape[ax] != tensors[0].shape[ax]:
                raise DimensionError(f"concat axis {axis}: {tensors[0].shape} vs {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                   backward, "concat")


def _is_advanced(key) -> bool:
    if isinstance(key, tuple):
        return any(_is_advanced(k) for k in key)
    return isinstance(key, (list, np.ndarray))


def getitem(a: Tensor, key) -> Tensor:
    src = a.data
    y = src[key]
    if y.size == 0:
        raise DimensionError(f"indexing {a.shape} with {key!r} selects nothing")
    advanced = _is_advanced(key)

    def backward(g):
        gx = np.zeros_like(src)
        if advanced:
            np.add.at(gx, key, g)
        else:
            gx[key] = g
        return (gx,)

    return _result(np.array(y, copy=advanced or None), (a,), backward, "getitem")


def take_rows(a: Tensor, index) -> Tensor:
    """Gather rows ``a[index]``; repeated indices accumulate in backward."""
    index = np.asarray(index, dtype=np.intp)
    if a.data.ndim != 2:
        raise DimensionError(f"take_rows expects a matrix, got {a.shape}")
    if index.ndim != 1 or index.size == 0:
        raise DimensionError("take_rows needs a nonempty 1-d index")
    if index.min() < 0 or index.max() >= a.shape[0]:
        raise DimensionError(f"take_rows: index out of range for {a.shape[0]} rows")
    src = a.data

    def backward(g):
        gx = np.zeros_like(src)
        np.add.at(gx, index, g)
        return (gx,)

    return _result(src[index], (a,), backward, "take_rows")


# ---------------------------------------------------------------------------
# reductions and normalisers


def sum_all(a: Tensor) -> Tensor:
    src_shape = a.data.shape
    return _result(np.array(a.data.sum(), dtype=a.data.dtype), (a,),
                   lambda g: (np.full(src_shape, g, dtype=g.dtype),), "sum")


def log_sum_exp(a: Tensor, axis: int | None = None) -> Tensor:
    """Stable log(sum(exp(x))) over all entries, or along ``axis`` of a matrix."""
    x = a.data
    if axis is None:
        m = x.max()
        if not np.isfinite(m):
            m = x.dtype.type(0)
        out = np.log(np.exp(x - m).sum()) + m
        y = np.array(out, dtype=x.dtype)

        def backward(g):
            return (g * np.exp(x - y),)

        return _result(y, (a,), backward, "log_sum_exp")

    if x.ndim != 2:
        raise DimensionError(f"log_sum_exp along an axis expects a matrix, got {a.shape}")
    m = x.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0)
    yk = np.log(np.exp(x - m).sum(axis=axis, keepdims=True)) + m
    y = yk.reshape(-1).astype(x.dtype)
    shape = yk.shape

    def backward(g):
        return (g.reshape(shape) * np.exp(x - yk),)

    return _result(y, (a,), backward, "log_sum_exp")


def softmax_rows(a: Tensor) -> Tensor:
    x = a.data
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got {a.shape}")
    e = np.exp(x - x.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _result(y, (a,), backward, "softmax_rows")


def log_softmax_rows(a: Tensor) -> Tensor:
    x = a.data
    if x.ndim != 2:
        raise DimensionError(f"log_softmax_rows expects a matrix, got {a.shape}")
    shifted = x - x.max(axis=1, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=1, keepdims=True),)

    return _result(y, (a,), backward, "log_softmax_rows")


# ---------------------------------------------------------------------------
# backward


def backward(loss: Tensor, sink: dict | None = None) -> None:
    """Propagate d loss / d leaf to every leaf that requires gradients.

    Leaf gradients add onto ``leaf.grad``; when ``sink`` is given they are
    accumulated in ``sink[leaf.id]`` instead and shared leaves stay untouched,
    which is what concurrent workers need.  The graph is cleared afterwards.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = _state.graph
    seed = np.ones_like(loss.data)
    if not loss.requires_grad:
        graph.clear()
        raise ContractError("loss does not depend on any tensor that requires grad")
    if loss.is_leaf:
        _accumulate_leaf(loss, seed, sink)
        return
    grads = {loss.id: seed}
    for node in reversed(graph.ops):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.parents:
                prev = grads.get(parent.id)
                grads[parent.id] = pg if prev is None else prev + pg
            else:
                _accumulate_leaf(parent, pg, sink)
    graph.clear()


def _accumulate_leaf(leaf: Tensor, g: np.ndarray, sink):
    g = np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.data.shape)
    if sink is None:
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    else:
        prev = sink.get(leaf.id)
        sink[leaf.id] = g.copy() if prev is None else prev + g


def grad(loss: Tensor, leaves: Iterable[Tensor]) -> list[np.ndarray]:
    """Functional gradient: returns d loss / d leaf without touching ``leaf.grad``."""
    leaves = list(leaves)
    sink: dict = {}
    backward(loss, sink=sink)
    return [sink.get(p.id, np.zeros_like(p.data)) for p in leaves]
