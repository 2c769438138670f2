"""Differentiable kernels over :class:`~biden.numkit.tensor.Tensor`.

Each kernel computes its forward value with numpy and hands a closure to
:func:`make_node` that maps the output gradient to per-input gradients.
Binary element-wise ops follow numpy broadcasting; gradients are summed back
to each operand's shape.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import NEG_INF, Tensor, as_tensor, make_node

# Mask entries at or below this are treated as masked out.
_MASKED = NEG_INF / 2


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return as_tensor(x, dtype=dtype)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _lift(b, a)
    b = _lift(b)
    return _lift(a, b), b


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- element-wise arithmetic ---------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_node(
        a.data + b.data, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_node(
        a.data - b.data, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def grad_fn(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(a.data * b.data, (a, b), grad_fn)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def grad_fn(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), grad_fn)


def neg(a: Tensor) -> Tensor:
    return make_node(-a.data, (a,), lambda g: (-g,))


def _fold(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x @ w`` for 2-d ``w`` as a single GEMM over all leading dims."""
    if x.ndim == 2:
        return x @ w
    return (x.reshape(-1, x.shape[-1]) @ w).reshape(*x.shape[:-1], w.shape[-1])


def matmul(a, b) -> Tensor:
    """Matrix product with numpy ``@`` batching; both operands need ndim >= 2."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    flat = b.ndim == 2
    out = _fold(a.data, b.data) if flat else a.data @ b.data

    def grad_fn(g):
        ga = gb = None
        if a.requires_grad:
            if flat:
                ga = _fold(g, b.data.T)
            else:
                ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if flat:
                k = a.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return make_node(out, (a, b), grad_fn)


# -- pointwise nonlinearities ----------------------------------------------

def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    return make_node(out, (x,), lambda g: (np.where(out > 0, g, 0),))


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    return make_node(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_node(out, (x,), lambda g: (g * (1.0 - out * out),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_node(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return make_node(np.log(x.data), (x,), lambda g: (g / x.data,))


# -- reductions ------------------------------------------------------------

def _expand(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)
    return make_node(
        np.asarray(out, dtype=x.dtype), (x,),
        lambda g: (np.array(_expand(g, x.shape, axis, keepdims)),),
    )


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return sum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def max(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Max along one axis; the gradient goes to the first maximal entry."""
    axis = axis % x.ndim
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis)
    if not keepdims:
        out = np.squeeze(out, axis)

    def grad_fn(g):
        full = np.zeros_like(x.data)
        gk = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(full, np.expand_dims(idx, axis), gk, axis)
        return (full,)

    return make_node(out, (x,), grad_fn)


# -- shape manipulation ------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = np.argsort(axes)
    return make_node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def index(x: Tensor, key) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate in backward."""
    if isinstance(key, Tensor):
        key = key.data
    out = x.data[key]

    def grad_fn(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        return (full,)

    return make_node(np.array(out), (x,), grad_fn)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(
            f"embedding id out of range [0, {table.shape[0]}): min={ids.min()}, max={ids.max()}"
        )
    out = table.data[ids]

    def grad_fn(g):
        flat = g.reshape(-1, table.shape[1])
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), flat)
        return (full,)

    return make_node(out, (table,), grad_fn)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [_lift(x) for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_node(out, xs, grad_fn)


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [_lift(x) for x in xs]
    out = np.stack([x.data for x in xs], axis=axis)

    def grad_fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return make_node(out, xs, grad_fn)


# -- attention and normalisation kernels ------------------------------------

def _valid_rows(mask: np.ndarray, axis: int, shape) -> np.ndarray:
    """Rows with at least one unmasked entry, broadcast to ``shape`` minus ``axis``."""
    valid = np.any(mask > _MASKED, axis=axis, keepdims=True)
    target = list(shape)
    target[axis] = 1
    return np.broadcast_to(valid, target)


def masked_softmax(logits, mask=None, axis: int = -1, return_invalid: bool = False):
    """Softmax of ``logits + mask`` along ``axis``.

    ``mask`` is additive with entries 0 or :data:`NEG_INF` and broadcasts
    against ``logits``. Rows whose entries are all masked produce exact zeros
    (and zero gradient) instead of a uniform or NaN row. With
    ``return_invalid=True`` a boolean array flagging those rows (reduced
    along ``axis``) is returned as well.
    """
    logits = _lift(logits)
    if mask is None:
        mask = np.zeros((1,) * logits.ndim, dtype=logits.dtype)
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=logits.dtype)
    z = logits.data + mask
    valid = _valid_rows(mask, axis, z.shape)
    z -= np.max(z, axis=axis, keepdims=True)
    # exp underflows to exactly 0 for NEG_INF entries of valid rows.
    out = np.exp(z, out=z)
    out /= np.sum(out, axis=axis, keepdims=True)
    if not valid.all():
        out = np.where(valid, out, 0.0).astype(logits.dtype)

    def grad_fn(g):
        inner = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - inner),)

    result = make_node(out, (logits,), grad_fn)
    if return_invalid:
        return result, ~np.squeeze(valid, axis)
    return result


def masked_log_softmax(logits, mask=None, axis: int = -1) -> Tensor:
    """Log-softmax of ``logits + mask``; masked entries hold about NEG_INF.

    Fully masked rows are returned as zeros with zero gradient.
    """
    logits = _lift(logits)
    if mask is None:
        mask = np.zeros((1,) * logits.ndim, dtype=logits.dtype)
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=logits.dtype)
    z = logits.data + mask
    valid = _valid_rows(mask, axis, z.shape)
    z = z - np.max(z, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    out = np.where(valid, z - lse, 0.0).astype(logits.dtype)
    probs = np.where(valid, np.exp(out), 0.0)

    def grad_fn(g):
        return (np.where(valid, g - probs * np.sum(g, axis=axis, keepdims=True), 0.0),)

    return make_node(out, (logits,), grad_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardise over the last axis then scale by ``gamma`` and shift by ``beta``."""
    x, gamma, beta = _lift(x), _lift(gamma, x), _lift(beta, x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def grad_fn(g):
        gx = gg = gb = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (
                gh - gh.mean(axis=-1, keepdims=True)
                - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            )
        if gamma.requires_grad:
            gg = unbroadcast(g * xhat, gamma.shape)
        if beta.requires_grad:
            gb = unbroadcast(g, beta.shape)
        return gx, gg, gb

    return make_node(out.astype(x.dtype), (x, gamma, beta), grad_fn)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    if not training or rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return mul(x, keep)
