"""
Reverse-mode differentiation core.

Tensors wrap float64 NumPy arrays. Every op applied while a ``Tape`` is
active (``with Tape() as tape: ...``) and touching at least one tensor that
requires a gradient is appended to that tape together with its
vector-Jacobian product. ``Tape.backward`` then walks the nodes in strict
reverse insertion order and accumulates into the leaf gradients.

Outside a tape the same ops run as plain NumPy evaluation, which is what
inference uses.
"""

import logging
import threading
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from . import config
from .errors import NumericalError, ShapeError, TapeError, TokenError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]
VJP = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """n-dimensional float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = np.zeros_like(self.data) if requires_grad else None
        self._tape: Optional["Tape"] = None  # tape that produced this tensor; None for leaves

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)


class _Node(NamedTuple):
    kind: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    vjp: VJP


_local = threading.local()


def _tape_stack() -> List["Tape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Append-only record of the ops of one training step."""

    def __init__(self):
        self.nodes: List[_Node] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, kind: str, inputs: Sequence[Tensor], output: Tensor, vjp: VJP) -> None:
        if self._consumed:
            raise TapeError("cannot record on a tape after backward()")
        output._tape = self
        self.nodes.append(_Node(kind, tuple(inputs), output, vjp))

    def backward(self, loss: Tensor) -> None:
        """Propagate dLoss/dLeaf into every requires_grad leaf reached by ``loss``."""
        if self._consumed:
            raise TapeError("backward() already called on this tape")
        if not self.nodes:
            raise TapeError("backward() on an empty tape")
        if loss.data.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")
        if loss._tape is not self:
            raise TapeError("loss was not produced on this tape")

        pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            upstream = pending.pop(id(node.output), None)
            if upstream is None:
                continue
            for tensor, grad in zip(node.inputs, node.vjp(upstream)):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor._tape is self:
                    key = id(tensor)
                    pending[key] = pending[key] + grad if key in pending else grad
                elif tensor._tape is None and tensor.grad is not None:
                    # Leaves accumulate: a parameter used k times receives k contributions
                    tensor.grad += grad

        # Release intermediate buffers; leaves keep their gradients
        self.nodes.clear()
        self._consumed = True


# -----------------------------------------------------------------------------
# Helpers
# -----------------------------------------------------------------------------
def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _emit(kind: str, inputs: Sequence[Tensor], data: np.ndarray, vjp: VJP) -> Tensor:
    """Wrap an op result and record it when a tape is active and a gradient is needed."""
    if config.AUTODIFF_CHECK_FINITE and not np.all(np.isfinite(data)):
        logger.error("%s: non-finite output from inputs of shapes %s", kind, [t.shape for t in inputs])
        raise NumericalError(f"{kind}: produced non-finite values")
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = needs_grad
    out.grad = None
    out._tape = None
    tape = active_tape()
    if needs_grad and tape is not None:
        tape.record(kind, inputs, out, vjp)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after NumPy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(kind: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(kind, a.shape, b.shape) from None


# -----------------------------------------------------------------------------
# Primitive ops
# -----------------------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", (a, b), a.data + b.data, vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit("mul", (a, b), a.data * b.data, vjp)


def matmul(a, b) -> Tensor:
    """Matrix product for 1-D/2-D operands with NumPy ``@`` semantics."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ShapeError("matmul", a.shape, b.shape, detail="operands must be 1-D or 2-D")
    inner_a = a.shape[-1]
    inner_b = b.shape[0]
    if inner_a != inner_b:
        raise ShapeError("matmul", a.shape, b.shape)

    def vjp(g):
        if a.data.ndim == 2 and b.data.ndim == 2:
            return g @ b.data.T, a.data.T @ g
        if a.data.ndim == 1 and b.data.ndim == 2:
            return b.data @ g, np.outer(a.data, g)
        if a.data.ndim == 2 and b.data.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g * b.data, g * a.data

    return _emit("matmul", (a, b), a.data @ b.data, vjp)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("transpose", a.shape, detail="expects a 2-D tensor")
    return _emit("transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    return _emit("reshape", (a,), data, lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat", (), detail="no operands")
    ndim = parts[0].data.ndim
    axis = axis % ndim
    for p in parts[1:]:
        same_rank = p.data.ndim == ndim
        if not same_rank or any(p.shape[d] != parts[0].shape[d] for d in range(ndim) if d != axis):
            raise ShapeError("concat", parts[0].shape, p.shape)
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def vjp(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(parts))
        )

    return _emit("concat", parts, np.concatenate([p.data for p in parts], axis=axis), vjp)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _emit("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return _emit("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def softmax_lastdim(a) -> Tensor:
    """Row-wise softmax over the last axis, stabilized by subtracting the row max."""
    a = as_tensor(a)
    if not np.all(np.isfinite(a.data)):
        raise NumericalError("softmax_lastdim: input must be finite")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _emit("softmax_lastdim", (a,), out, vjp)


def log(a, floor: float = config.LOG_CLAMP) -> Tensor:
    """Natural log of ``max(a, floor)``; clamped entries pass no gradient."""
    a = as_tensor(a)
    clamped = np.maximum(a.data, floor)
    live = a.data > floor

    def vjp(g):
        return (np.where(live, g / clamped, 0.0),)

    return _emit("log", (a,), np.log(clamped), vjp)


def sum_(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _emit("sum", (a,), np.asarray(a.data.sum(axis=axis)), vjp)


def mean(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]

    def vjp(g):
        if axis is None:
            return (np.full(a.shape, g / count),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape) / count,)

    return _emit("mean", (a,), np.asarray(a.data.mean(axis=axis)), vjp)


def slice_(a, key) -> Tensor:
    """Basic (non-fancy) indexing; the gradient is scattered back into a zero buffer."""
    a = as_tensor(a)
    try:
        data = a.data[key]
    except IndexError:
        raise ShapeError("slice", a.shape, detail=f"index {key!r} out of range") from None

    def vjp(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _emit("slice", (a,), np.array(data, dtype=np.float64), vjp)


def embed_lookup(table, ids: Union[int, Sequence[int], np.ndarray]) -> Tensor:
    """Gather rows of ``table`` by token id; repeated ids accumulate gradient."""
    table = as_tensor(table)
    index = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError("embed_lookup", table.shape, detail="table must be 2-D")
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise TokenError(f"embed_lookup: token id outside [0, {table.shape[0]})")

    def vjp(g):
        full = np.zeros_like(table.data)
        np.add.at(full, index, g)
        return (full,)

    return _emit("embed_lookup", (table,), table.data[index].copy(), vjp)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equally shaped 1-D tensors into the rows of a 2-D tensor."""
    return concat([reshape(t, (1, t.shape[-1])) for t in tensors], axis=0)


OPS: Dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "concat": concat,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softmax_lastdim": softmax_lastdim,
    "log": log,
    "sum": sum_,
    "mean": mean,
    "slice": slice_,
    "embed_lookup": embed_lookup,
    "transpose": transpose,
    "reshape": reshape,
}


def forward_op(kind: str, inputs: Sequence, **attrs) -> Tensor:
    """Apply the primitive ``kind`` to ``inputs`` (ops taking a list receive it whole)."""
    try:
        op = OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind '{kind}'") from None
    if kind == "concat":
        return op(inputs, **attrs)
    return op(*inputs, **attrs)


def backward(loss: Tensor) -> None:
    """Run backward on the tape that produced ``loss``."""
    if loss._tape is None:
        raise TapeError("loss is not attached to a tape")
    loss._tape.backward(loss)
