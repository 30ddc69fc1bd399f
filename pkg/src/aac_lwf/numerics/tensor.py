"""Dense float64 tensors with tape-free reverse-mode differentiation.

Every op builds its output eagerly and, when gradients are being tracked,
records its parents plus a closure mapping the upstream gradient to one
gradient per parent. :func:`backward` walks the resulting DAG in reverse
topological order.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import InvariantError, NumericError, ParameterError

_grad_enabled = True
_debug_checks = False

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (teacher forwards, evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def debug_checks(enabled: bool = True):
    """Raise NumericError as soon as any op produces NaN or Inf."""
    global _debug_checks
    prev = _debug_checks
    _debug_checks = enabled
    try:
        yield
    finally:
        _debug_checks = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> Tensor:
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = False
        t._parents = ()
        t._backward = None
        t.name = None
        return t

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
        if self.data.size != 1:
            raise ParameterError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; the functions below do the work
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, pow_(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return pow_(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=np.float64))


def make_op(data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    """Wrap an op result, attaching graph links only when they are needed."""
    out = Tensor._wrap(data)
    if _debug_checks and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by {getattr(backward, '__qualname__', 'op')}")
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that require grad, parents before children."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tracked tensor reachable from ``loss``.

    Leaf gradients accumulate onto whatever is already stored, so callers
    zero them between optimisation steps.
    """
    if loss.data.size != 1:
        raise ParameterError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        node.grad = g
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def _bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make_op(a.data + b.data, (a, b), _bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def _bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return make_op(a.data - b.data, (a, b), _bw)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        s = float(b)
        return make_op(a.data * s, (a,), lambda g: (g * s,))
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    ad, bd = a.data, b.data

    def _bw(g):
        ga = _unbroadcast(g * bd, sa) if a.requires_grad else None
        gb = _unbroadcast(g * ad, sb) if b.requires_grad else None
        return ga, gb

    return make_op(ad * bd, (a, b), _bw)


def pow_(a: Tensor, exponent: float) -> Tensor:
    a = as_tensor(a)
    x = a.data
    e = float(exponent)
    return make_op(x**e, (a,), lambda g: (g * e * x ** (e - 1.0),))


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log; values below ``floor`` are clamped and get zero gradient."""
    a = as_tensor(a)
    x = a.data
    if floor > 0.0:
        keep = x > floor
        safe = np.where(keep, x, floor)
        return make_op(np.log(safe), (a,), lambda g: (np.where(keep, g / safe, 0.0),))
    return make_op(np.log(x), (a,), lambda g: (g / x,))


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    keep = a.data > 0
    return make_op(np.where(keep, a.data, 0.0), (a,), lambda g: (np.where(keep, g, 0.0),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU; smooth, so finite differences stay clean."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def _bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return make_op(out, (a,), _bw)


# reductions and shape ops -------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        elif axis is None:
            g = g.reshape((1,) * len(shape))
        return (np.broadcast_to(g, shape).copy(),)

    return make_op(np.atleast_1d(out), (a,), _bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis, keepdims), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    a = as_tensor(a)
    if not axes:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_op(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def _bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, _bw)


def take_last(a: Tensor, index: int) -> Tensor:
    """Slice ``a[..., index, :]`` (used for the last decoder step)."""
    a = as_tensor(a)
    shape = a.shape

    def _bw(g):
        full = np.zeros(shape)
        full[..., index, :] = g
        return (full,)

    return make_op(a.data[..., index, :].copy(), (a,), _bw)


# linear algebra -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched ``a @ b``; a 2-D ``b`` is shared across all leading dims of ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ParameterError(f"matmul needs rank >= 2, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ParameterError(f"matmul inner dims differ: {ad.shape} @ {bd.shape}")
    out = ad @ bd

    def _bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return make_op(out, (a, b), _bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return add(y, bias) if bias is not None else y


def embedding(weight: Tensor, ids) -> Tensor:
    """Row lookup ``weight[ids]`` with scatter-add backward."""
    ids = np.asarray(ids, dtype=np.int64)
    n_rows = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
        raise ParameterError(f"embedding index out of range [0, {n_rows})")

    def _bw(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (full,)

    return make_op(weight.data[ids], (weight,), _bw)


# fused nonlinear blocks -----------------------------------------------------

def softmax_t(logits, temperature: float = 1.0, axis: int = -1) -> Tensor:
    """Temperature softmax ``softmax(logits / temperature)`` over ``axis``."""
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    logits = as_tensor(logits)
    z = logits.data / temperature if temperature != 1.0 else logits.data
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    inv_t = 1.0 / temperature

    def _bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        gz = out * (g - dot)
        return (gz * inv_t if temperature != 1.0 else gz,)

    return make_op(out, (logits,), _bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    n = xd.shape[-1]

    def _bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gain.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        gg = (g * xhat).reshape(-1, n).sum(axis=0)
        gb = g.reshape(-1, n).sum(axis=0)
        return gx, gg, gb

    return make_op(out, (x, gain, bias), _bw)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, dilation: int = 1) -> Tensor:
    """Length-preserving dilated 1-D convolution over the time axis.

    ``x`` is (B, T, C_in) and ``weight`` is (K, C_in, C_out) with odd K;
    zero padding of ``dilation * (K - 1) / 2`` frames on each side.
    """
    x = as_tensor(x)
    K, c_in, c_out = weight.shape
    if K % 2 != 1:
        raise ParameterError("conv1d kernel size must be odd to preserve length")
    if x.shape[-1] != c_in:
        raise ParameterError(f"conv1d expects {c_in} input channels, got {x.shape[-1]}")
    B, T, _ = x.shape
    pad = dilation * (K - 1) // 2
    xp = np.zeros((B, T + 2 * pad, c_in))
    xp[:, pad:pad + T] = x.data
    cols = np.concatenate([xp[:, k * dilation:k * dilation + T] for k in range(K)], axis=-1)
    w2 = weight.data.reshape(K * c_in, c_out)
    out = cols @ w2
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def _bw(g):
        gx = None
        if x.requires_grad:
            gcols = g @ w2.T
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[:, k * dilation:k * dilation + T] += gcols[..., k * c_in:(k + 1) * c_in]
            gx = gxp[:, pad:pad + T]
        gw = (cols.reshape(-1, K * c_in).T @ g.reshape(-1, c_out)).reshape(K, c_in, c_out)
        if bias is None:
            return gx, gw
        return gx, gw, g.reshape(-1, c_out).sum(axis=0)

    return make_op(out, parents, _bw)


def depthwise_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel 'same' 2-D convolution on (B, T, F, C) with weight (kh, kw, C)."""
    x = as_tensor(x)
    kh, kw, C = weight.shape
    if kh % 2 != 1 or kw % 2 != 1:
        raise ParameterError("depthwise kernel sizes must be odd")
    if x.shape[-1] != C:
        raise ParameterError(f"depthwise conv expects {C} channels, got {x.shape[-1]}")
    B, T, F, _ = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.zeros((B, T + 2 * ph, F + 2 * pw, C))
    xp[:, ph:ph + T, pw:pw + F] = x.data
    wd = weight.data
    out = np.zeros((B, T, F, C))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i:i + T, j:j + F] * wd[i, j]
    if bias is not None:
        out += bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def _bw(g):
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + T, j:j + F] += g * wd[i, j]
            gx = gxp[:, ph:ph + T, pw:pw + F]
        gw = np.empty_like(wd)
        for i in range(kh):
            for j in range(kw):
                gw[i, j] = (g * xp[:, i:i + T, j:j + F]).reshape(-1, C).sum(axis=0)
        if bias is None:
            return gx, gw
        return gx, gw, g.reshape(-1, C).sum(axis=0)

    return make_op(out, parents, _bw)


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(p.data)) for p in params)


def check_invariants(t: Tensor) -> None:
    """Shape/finiteness contract of a tensor; raises InvariantError."""
    if t.grad is not None and t.grad.shape != t.data.shape:
        raise InvariantError(f"grad shape {t.grad.shape} != data shape {t.data.shape}")
    if not np.all(np.isfinite(t.data)):
        raise NumericError("tensor holds non-finite values")
