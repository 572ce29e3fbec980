"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` together with the closure that maps the
gradient of its output back onto its parents. Every primitive the seizure model
needs (1-D convolution, pooling, batch norm, masked softmax, activations,
dropout, dense layers) lives here as a plain function.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

Array = np.ndarray
BackwardFn = Callable[[Array], Sequence["Array | None"]]

_GRAD_ENABLED = True
_DEBUG = False


class NonFiniteError(FloatingPointError):
    """Raised in debug mode when an op produces NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def debug_mode(enabled: bool = True) -> Iterator[None]:
    """Check every op output for non-finite values while active."""
    global _DEBUG
    prev = _DEBUG
    _DEBUG = enabled
    try:
        yield
    finally:
        _DEBUG = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """Node of the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "retain", "_parents", "_backward", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        _parents: tuple["Tensor", ...] = (),
        _backward: BackwardFn | None = None,
    ) -> None:
        self.data: Array = np.asarray(data)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self.retain = False
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> Array:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def retain_grad(self) -> "Tensor":
        """Keep ``.grad`` on this intermediate node after backward."""
        self.retain = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def backward(self) -> None:
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: Array, parents: tuple[Tensor, ...], fn: BackwardFn) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {fn.__qualname__.split('.')[0]}")
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=fn)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def _propagate(root: Tensor, seed: Array) -> dict[int, Array]:
    grads: dict[int, Array] = {id(root): seed}
    for node in reversed(_topo_order(root)):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        if not node.retain:
            del grads[id(node)]
    return grads


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires-grad leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = _propagate(loss, np.ones_like(loss.data))
    for node in _topo_order(loss):
        g = grads.get(id(node))
        if g is None:
            continue
        if node._backward is None or node.retain:
            g = np.asarray(g, dtype=node.data.dtype).reshape(node.shape)
            node.grad = g if node.grad is None else node.grad + g


def grad(output: Tensor, inputs: Sequence[Tensor], seed: Array | None = None) -> list[Array]:
    """Gradients of ``output`` w.r.t. ``inputs`` without touching ``.grad``.

    ``inputs`` may be intermediate nodes; they are retained for the pass only.
    """
    if seed is None:
        if output.data.size != 1:
            raise ShapeError("grad() needs a scalar output or an explicit seed")
        seed = np.ones_like(output.data)
    flags = [t.retain for t in inputs]
    for t in inputs:
        t.retain = True
    try:
        grads = _propagate(output, seed) if output.requires_grad else {}
    finally:
        for t, f in zip(inputs, flags):
            t.retain = f
    return [np.asarray(grads.get(id(t), np.zeros_like(t.data))).reshape(t.shape) for t in inputs]


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _lift(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = _lift(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _lift(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _lift(a, b)
    ad, bd = a.data, b.data

    def back(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), back)


def div(a, b) -> Tensor:
    a, b = _lift(a, b)
    ad, bd = a.data, b.data

    def back(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)

    return _make(ad / bd, (a, b), back)


def pow_(x: Tensor, exponent: float) -> Tensor:
    xd = x.data
    return _make(xd**exponent, (x,), lambda g: (g * exponent * xd ** (exponent - 1),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return _make(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


# reductions and shape ops

def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    count = x.data.size if axis is None else int(np.prod([shape[a] for a in np.atleast_1d(axis)]))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape),)

    return _make(np.mean(x.data, axis=axis, keepdims=keepdims), (x,), back)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def getitem(x: Tensor, key) -> Tensor:
    shape, dtype = x.shape, x.dtype

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, key, g)
        return (out,)

    return _make(x.data[key], (x,), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a, b)
    ad, bd = a.data, b.data
    if ad.shape[-1] != bd.shape[-2 if bd.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner dims disagree: {ad.shape} @ {bd.shape}")

    def back(g):
        if bd.ndim == 1:
            ga = g[..., None] * bd
            gb = np.tensordot(g, ad, axes=(tuple(range(g.ndim)), tuple(range(g.ndim))))
            return _unbroadcast(ga, ad.shape), gb
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(np.matmul(ad, bd), (a, b), back)


# activations

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    # maximum keeps NaN, so corrupt inputs surface as a non-finite loss
    return _make(np.maximum(x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    xd = x.data
    scale = np.where(xd > 0, 1.0, slope).astype(xd.dtype)
    return _make(xd * scale, (x,), lambda g: (g * scale,))


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    xd = x.data
    neg = alpha * np.expm1(np.minimum(xd, 0))
    out = np.where(xd > 0, xd, neg).astype(xd.dtype)
    slope = np.where(xd > 0, 1.0, neg + alpha).astype(xd.dtype)
    return _make(out, (x,), lambda g: (g * slope,))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign so exp never overflows
    z = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(xd.dtype)
    return _make(out, (x,), lambda g: (g * out * (1 - out),))


def masked_softmax(logits: Tensor, mask: Array) -> Tensor:
    """Softmax along the last axis restricted to ``mask``; masked entries are exactly 0.

    Rows are shifted by their masked maximum before exponentiation.
    """
    mask = np.asarray(mask, dtype=bool)
    x = logits.data
    neg = np.where(mask, x, -np.inf)
    shifted = np.where(mask, x - neg.max(axis=-1, keepdims=True), 0)
    e = np.where(mask, np.exp(shifted), 0).astype(x.dtype)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (logits,), back)


# layers

def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight + bias`` over the last axis."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"dense: input width {x.shape[-1]} vs weight {weight.shape}")
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def _same_pad(x: Array, k: int) -> Array:
    p = k // 2
    return np.pad(x, ((0, 0), (0, 0), (p, p)))


def _xcorr(x: Array, w: Array) -> Array:
    # x: (B, Cin, T), w: (Cout, Cin, K) -> (B, Cout, T), zero "same" padding.
    # One matmul produces every tap's partial output; taps are then shift-added.
    c_out, c_in, k = w.shape
    if k == 1:
        return np.matmul(w[:, :, 0], x)
    t = x.shape[2]
    taps = np.matmul(w.transpose(2, 0, 1).reshape(k * c_out, c_in), _same_pad(x, k))
    out = taps[:, :c_out, :t].copy()
    for j in range(1, k):
        out += taps[:, j * c_out : (j + 1) * c_out, j : j + t]
    return out


def _xcorr_weight_grad(x: Array, g: Array, k: int) -> Array:
    # d(out)/d(w) contracted with g: (Cout, Cin, K)
    b, c_in, t = x.shape
    c_out = g.shape[1]
    p = k // 2
    xl = np.zeros((b, t + 2 * p, c_in), dtype=x.dtype)
    xl[:, p : p + t] = x.transpose(0, 2, 1)
    gl = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(b * t, c_out)
    out = np.empty((c_out, c_in, k), dtype=np.result_type(x, g))
    for j in range(k):
        out[:, :, j] = gl.T @ xl[:, j : j + t].reshape(b * t, c_in)
    return out


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Cross-correlation along the last axis with odd kernel and zero "same" padding.

    ``x`` is ``(N, C_in, T)``; ``weight`` is ``(C_out, C_in, K)``.
    """
    xd, wd = x.data, weight.data
    if xd.ndim != 3 or wd.ndim != 3:
        raise ShapeError(f"conv1d expects 3-D input and weight, got {xd.shape}, {wd.shape}")
    if xd.shape[1] != wd.shape[1]:
        raise ShapeError(f"conv1d channel mismatch: input {xd.shape}, weight {wd.shape}")
    k = wd.shape[2]
    if k % 2 == 0:
        raise ShapeError(f"conv1d needs an odd kernel, got K={k}")
    out = _xcorr(xd, wd)
    if bias is not None:
        out = out + bias.data[None, :, None]

    def back(g):
        gx = _xcorr(g, np.ascontiguousarray(wd[:, :, ::-1].transpose(1, 0, 2)))
        if k == 1:
            gw = np.tensordot(g, xd, axes=([0, 2], [0, 2]))[:, :, None]
        else:
            gw = _xcorr_weight_grad(xd, g, k)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, back)


def avg_pool1d(x: Tensor, window: int = 2) -> Tensor:
    """Mean over disjoint windows of the last axis (stride == window)."""
    t = x.shape[-1]
    if t % window:
        raise ShapeError(f"avg_pool1d: length {t} not divisible by {window}")
    lead = x.shape[:-1]
    out = x.data.reshape(*lead, t // window, window).mean(axis=-1)
    return _make(out, (x,), lambda g: (np.repeat(g / window, window, axis=-1),))


class BatchNormState:
    """Running statistics of one batch-norm layer."""

    def __init__(self, num_features: int, momentum: float = 0.9, eps: float = 1e-5, dtype=np.float32):
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, train: bool) -> Tensor:
    """Normalize over every axis except axis 1 (the feature/filter axis)."""
    xd = x.data
    if xd.size == 0 or xd.shape[0] == 0:
        raise ShapeError("batch_norm on an empty batch")
    axes = (0,) + tuple(range(2, xd.ndim))
    bshape = [1] * xd.ndim
    bshape[1] = xd.shape[1]
    if train:
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        m = state.momentum
        dt = state.running_mean.dtype
        state.running_mean = (m * state.running_mean + (1 - m) * mu).astype(dt)
        state.running_var = (m * state.running_var + (1 - m) * var).astype(dt)
    else:
        mu = state.running_mean.astype(xd.dtype)
        var = state.running_var.astype(xd.dtype)
    inv = (1.0 / np.sqrt(var + state.eps)).astype(xd.dtype)
    xhat = (xd - mu.reshape(bshape)) * inv.reshape(bshape)
    gd = gamma.data.reshape(bshape)
    out = xhat * gd + beta.data.reshape(bshape)
    count = xd.size // xd.shape[1]

    def back(g):
        gbeta = g.sum(axis=axes)
        ggamma = (g * xhat).sum(axis=axes)
        gxhat = g * gd
        if train:
            gx = (inv.reshape(bshape) / count) * (
                count * gxhat
                - gxhat.sum(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            gx = gxhat * inv.reshape(bshape)
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), back)


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) so eval is the identity."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not train or p == 0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs a seeded rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


class ParameterStore:
    """Named parameters iterated in lexicographic order of their dotted paths."""

    def __init__(self) -> None:
        self._items: dict[str, Tensor] = {}

    def add(self, name: str, value: Array) -> Tensor:
        if name in self._items:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self._items[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __len__(self) -> int:
        return len(self._items)

    def names(self) -> list[str]:
        return sorted(self._items)

    def items(self) -> list[tuple[str, Tensor]]:
        return [(n, self._items[n]) for n in self.names()]

    def __iter__(self):
        return iter(self.names())

    def zero_grad(self) -> None:
        for t in self._items.values():
            t.grad = None

    def grads(self) -> dict[str, Array]:
        return {
            n: (t.grad if t.grad is not None else np.zeros_like(t.data)) for n, t in self.items()
        }

    def num_scalars(self) -> int:
        return int(sum(t.data.size for t in self._items.values()))
