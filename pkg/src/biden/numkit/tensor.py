"""Dense tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors record a node on
the innermost active :class:`Tape` whenever one of their inputs requires a
gradient; outside any tape they run as plain numpy and build no graph. Nodes
are appended in creation order, so the tape is topologically sorted by
construction and :func:`backward` is a single reverse sweep.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from collections.abc import Mapping
from typing import Callable, Iterator, Sequence

import numpy as np

NEG_INF = -1e9

_state = threading.local()
_ids = itertools.count()
_default_dtype = np.float64


def get_default_dtype() -> type:
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _default_dtype = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def _tape_stack() -> list:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


def current_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "id", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else _default_dtype
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.name = name
        self.id = next(_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.dtype)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops
        return ops.matmul(other, self)

    def __getitem__(self, index):
        from . import ops
        return ops.index(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=-1, keepdims=False):
        from . import ops
        return ops.max(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(tuple(axes))

    @property
    def T(self):
        return self.swapaxes(-1, -2)


def as_tensor(x, dtype=None) -> Tensor:
    """Wrap ``x`` as a constant tensor unless it already is one."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or _default_dtype))


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Create an op output and record it on the active tape when needed.

    ``backward_fn(grad)`` returns one gradient (or ``None``) per parent.
    """
    out = Tensor(data, dtype=data.dtype)
    tape = current_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        tape._record(out)
    return out


class Tape:
    """Ordered record of differentiable ops.

    Use as a context manager; ops executed inside are appended to ``nodes``.
    A tape is single-writer: do not record on one tape from several threads.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.grads: dict[int, np.ndarray] = {}

    def _record(self, node: Tensor) -> None:
        self.nodes.append(node)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:
            stack.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)


class Gradients(Mapping):
    """Gradient buffers of the leaves reached by a backward sweep, keyed by tensor."""

    def __init__(self, leaves: dict[int, Tensor], buffers: dict[int, np.ndarray]):
        self._leaves = leaves
        self._buffers = buffers

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        return self._buffers[tensor.id]

    def __contains__(self, tensor) -> bool:
        return isinstance(tensor, Tensor) and tensor.id in self._buffers

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self._leaves.values())

    def __len__(self) -> int:
        return len(self._leaves)

    def get(self, tensor, default=None):
        return self._buffers.get(tensor.id, default)


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Reverse sweep over ``tape`` from the scalar ``loss``.

    Every leaf with ``requires_grad`` that ``loss`` depends on receives a
    buffer of its own shape. Leaves it does not depend on get zeros only if
    they appear as a parent somewhere on the tape.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        shape = getattr(loss, "shape", None)
        raise ValueError(f"backward needs a scalar loss, got shape {shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires grad")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent.is_leaf:
                leaves.setdefault(parent.id, parent)
            prev = grads.get(parent.id)
            grads[parent.id] = pg if prev is None else prev + pg
    if loss.is_leaf:
        leaves[loss.id] = loss
    buffers = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        buffers[key] = np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
    tape.grads = buffers
    return Gradients(leaves, buffers)
