"""Dense n-d tensors with reverse-mode automatic differentiation.

Values live in row-major numpy arrays (float32 for training, float64 for
verification runs). Differentiable operations record a closure on the
thread-local :class:`Tape` while one is active; ``backward`` replays the
tape once, in reverse execution order, accumulating gradients into every
reachable tensor that requires them.
"""

from __future__ import annotations

import json
import threading
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, GraphError, NumericError, ShapeError

DEFAULT_DTYPE = np.float32

_state = threading.local()

# Forward results are checked for NaN/Inf by default; heavy sweeps may
# disable the check via set_finite_checks(False).
_finite_checks = True


def set_finite_checks(enabled: bool) -> None:
    global _finite_checks
    _finite_checks = enabled


def finite_checks_enabled() -> bool:
    return _finite_checks


def _tape_stack() -> list:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense array plus the gradient accumulated for it during backward."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # operator sugar; all routing through module-level ops so recording is uniform
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other, self.dtype))

    def __neg__(self):
        return scale(self, -1.0)


class Param:
    """A learnable tensor with an eagerly allocated, same-shape gradient buffer."""

    __slots__ = ("value",)

    def __init__(self, data, dtype=None):
        self.value = data if isinstance(data, Tensor) else Tensor(data, dtype=dtype)
        self.value.requires_grad = True
        self.value.zero_grad()

    @property
    def grad(self) -> np.ndarray:
        return self.value.grad

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def zero_grad(self) -> None:
        self.value.zero_grad()

    def __repr__(self) -> str:
        return f"Param(shape={self.shape}, dtype={self.value.dtype.name})"


class Tape:
    """Ordered record of executed primitive ops for one reverse traversal.

    Usable as a context manager; ops executed inside record themselves here.
    A tape may be replayed backward exactly once.
    """

    __slots__ = ("ops", "consumed")

    def __init__(self):
        self.ops: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.consumed = False

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable) -> None:
        self.ops.append((out, inputs, backward_fn))

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self.ops)


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into every tensor recorded on the tape.

    The loss must be a scalar produced by ops recorded on this tape. Each
    op is visited exactly once, in reverse execution order; params untouched
    by the loss keep whatever gradient they already hold (zeros after a
    zero_grad pass).
    """
    if loss.size != 1:
        raise GraphError(f"backward requires a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise GraphError("tape already replayed backward once")
    if not any(out is loss for out, _, _ in tape.ops):
        raise GraphError("loss was not computed on this tape")
    tape.consumed = True
    loss.accumulate_grad(np.ones_like(loss.data))
    for out, inputs, backward_fn in reversed(tape.ops):
        if out.grad is None:
            continue
        grads = backward_fn(out.grad)
        for t, g in zip(inputs, grads):
            if g is not None and t.requires_grad:
                t.accumulate_grad(g)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _emit(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op result, check finiteness, and record on the active tape."""
    if _finite_checks and not np.all(np.isfinite(data)):
        raise NumericError("non-finite values produced by a forward op")
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, tuple(inputs), backward_fn)
    return out


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _emit(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit(a.data * b.data, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    def bwd(g):
        return (g * s,)

    return _emit(a.data * s, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands need at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")

    def bwd(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit(a.data @ b.data, (a, b), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape

    def bwd(g):
        return (g.reshape(old),)

    return _emit(a.data.reshape(shape), (a,), bwd)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        return (g.transpose(inverse),)

    return _emit(a.data.transpose(axes), (a,), bwd)


def broadcast_to(a: Tensor, shape) -> Tensor:
    def bwd(g):
        return (_unbroadcast(g, a.shape),)

    return _emit(np.broadcast_to(a.data, shape).copy(), (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _emit(a.data[index].copy(), (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    def bwd(g):
        return (np.full_like(a.data, float(g)),)

    return _emit(np.asarray(a.data.sum(), dtype=a.dtype), (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    n = a.size

    def bwd(g):
        return (np.full_like(a.data, float(g) / n),)

    return _emit(np.asarray(a.data.mean(), dtype=a.dtype), (a,), bwd)


def abs_op(a: Tensor) -> Tensor:
    def bwd(g):
        return (g * np.sign(a.data),)

    return _emit(np.abs(a.data), (a,), bwd)


def softmax(a: Tensor) -> Tensor:
    """Row softmax over the last axis, computed with max subtraction."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        return ((g - dot) * p,)

    return _emit(p, (a,), bwd)


def topn_mean(a: Tensor, n: int, axis: int) -> Tensor:
    """Mean of the n largest entries along `axis` (ties kept in stable order)."""
    m = a.shape[axis]
    if not 1 <= n <= m:
        raise ContractError(f"top-n count {n} outside [1, {m}]")
    order = np.argsort(-a.data, axis=axis, kind="stable")
    top = np.take(order, np.arange(n), axis=axis)
    vals = np.take_along_axis(a.data, top, axis=axis)

    def bwd(g):
        full = np.zeros_like(a.data)
        expanded = np.repeat(np.expand_dims(g / n, axis), n, axis=axis)
        np.put_along_axis(full, top, expanded, axis=axis)
        return (full,)

    return _emit(vals.mean(axis=axis), (a,), bwd)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (batch, classes) logits, got {logits.shape}")
    b, c = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.min() < 0 or labels.max() >= c:
        raise ContractError(f"label outside [0, {c})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(b), labels]
    loss = (lse - picked).mean()
    probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)

    def bwd(g):
        grad = probs.copy()
        grad[np.arange(b), labels] -= 1.0
        return (grad * (float(g) / b),)

    return _emit(np.asarray(loss, dtype=logits.dtype), (logits,), bwd)


# ---------------------------------------------------------------------------
# debug dump: raw little-endian payload plus a JSON shape sidecar
# ---------------------------------------------------------------------------


def dump_tensor(t: Tensor, path) -> None:
    arr = t.data
    arr.astype(arr.dtype.newbyteorder("<")).tofile(path)
    sidecar = {"shape": list(arr.shape), "dtype": arr.dtype.name}
    with open(f"{path}.json", "w") as f:
        json.dump(sidecar, f, sort_keys=True)


def load_tensor(path) -> Tensor:
    with open(f"{path}.json") as f:
        sidecar = json.load(f)
    dtype = np.dtype(sidecar["dtype"]).newbyteorder("<")
    arr = np.fromfile(path, dtype=dtype).reshape(sidecar["shape"])
    return Tensor(arr.astype(sidecar["dtype"]))
