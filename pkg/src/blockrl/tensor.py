"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything is built on numpy arrays. A Tensor either is a leaf (parameter or
constant) or records the operation that produced it; calling :func:`backward`
on a scalar walks the recorded graph once in reverse topological order and
accumulates gradients additively.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable

import numpy as np
from scipy.special import erf as _erf


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class TapeError(RuntimeError):
    """Backward was requested on a value with no recorded operations."""


class DeterminismError(RuntimeError):
    """A function expected to be deterministic returned differing values."""


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (pure forward evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.ravel()[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return mul(self, power(_as_tensor(other), -1.0))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum-reduce gradient ``g`` down to ``shape`` (inverse of broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# -- elementwise primitives --------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        if a.requires_grad:
            _accum(a, -g)

    return _make(-a.data, (a,), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), bwd)


def power(a: Tensor, p: float) -> Tensor:
    data = a.data ** p

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * p * a.data ** (p - 1.0))

    return _make(data, (a,), bwd)


def square(a: Tensor) -> Tensor:
    return power(a, 2.0)


def sqrt(a: Tensor) -> Tensor:
    return power(a, 0.5)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * data)

    return _make(data, (a,), bwd)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g / a.data)

    return _make(data, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * (1.0 - data * data))

    return _make(data, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-np.clip(a.data, -500, 500)))

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * data * (1.0 - data))

    return _make(data, (a,), bwd)


def softplus(a: Tensor) -> Tensor:
    # log(1 + e^x) computed stably for large |x|
    x = a.data
    data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def bwd(g):
        if a.requires_grad:
            s = 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))
            _accum(a, g * s)

    return _make(data, (a,), bwd)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    x = a.data
    cdf = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    data = x * cdf

    def bwd(g):
        if a.requires_grad:
            pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
            _accum(a, g * (cdf + x * pdf))

    return _make(data, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * mask)

    return _make(a.data * mask, (a,), bwd)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; at ties the gradient goes to the first operand."""
    take_a = a.data >= b.data
    data = np.where(take_a, a.data, b.data)

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * ~take_a, b.shape))

    return _make(data, (a, b), bwd)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    take_a = a.data <= b.data
    data = np.where(take_a, a.data, b.data)

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * ~take_a, b.shape))

    return _make(data, (a, b), bwd)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * inside)

    return _make(np.clip(a.data, lo, hi), (a,), bwd)


# -- structural primitives ----------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _make(data, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects rank-2, got {a.shape}")

    def bwd(g):
        if a.requires_grad:
            _accum(a, g.T)

    return _make(a.data.T, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g.reshape(a.shape))

    return _make(data, (a,), bwd)


def take(a: Tensor, idx) -> Tensor:
    """Basic slice/index; gradient scatters back into the source shape."""
    data = a.data[idx]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            _accum(a, full)

    return _make(np.array(data, copy=True), (a,), bwd)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accum(t, g[tuple(sl)])

    return _make(data, tuple(ts), bwd)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if a.requires_grad:
            if axis is None:
                _accum(a, np.broadcast_to(g, a.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                _accum(a, np.broadcast_to(gg, a.shape).copy())

    return _make(data, (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def stop_gradient(a: Tensor) -> Tensor:
    return Tensor(a.data.copy())


# -- fused network primitives --------------------------------------------------


def softmax_rows(m: Tensor) -> Tensor:
    """Row-wise softmax of a rank-2 tensor, max-subtracted for stability."""
    if m.ndim != 2:
        raise ShapeError(f"softmax_rows expects rank-2, got {m.shape}")
    z = m.data - m.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        if m.requires_grad:
            dot = (g * s).sum(axis=1, keepdims=True)
            _accum(m, s * (g - dot))

    return _make(s, (m,), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization to zero mean / unit variance, then affine."""
    if x.ndim != 2:
        raise ShapeError(f"layer_norm expects rank-2, got {x.shape}")
    d = x.shape[1]
    if gamma.size != d or beta.size != d:
        raise ShapeError(
            f"layer_norm affine length {gamma.size}/{beta.size} != feature dim {d}"
        )
    mu = tmean(x, axis=1, keepdims=True)
    centered = x - mu
    var = tmean(square(centered), axis=1, keepdims=True)
    inv = power(var + Tensor(eps), -0.5)
    xhat = centered * inv
    return xhat * reshape(gamma, (1, d)) + reshape(beta, (1, d))


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: Bernoulli mask scaled by 1/(1-rate) when training."""
    if not training or rate <= 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def bwd(g):
        if x.requires_grad:
            _accum(x, g * mask)

    return _make(x.data * mask, (x,), bwd)


_LOG_2PI = math.log(2.0 * math.pi)


def gaussian_log_density(x: Tensor, mu: Tensor, sigma: Tensor) -> Tensor:
    """Row-wise diagonal Gaussian log-density; returns shape (rows, 1).

    ``mu`` and ``sigma`` broadcast against the rows of ``x``.
    """
    z = (x - mu) * power(sigma, -1.0)
    quad = tsum(square(z), axis=1, keepdims=True)
    # sum of log sigma broadcasts across rows
    logdet = tsum(log(sigma), axis=-1, keepdims=True)
    d = x.shape[-1]
    return Tensor(-0.5 * d * _LOG_2PI) - logdet - 0.5 * quad


# -- parameters and backward ---------------------------------------------------


class ParameterStore:
    """Ordered, named parameter tensors with parallel gradient buffers."""

    def __init__(self):
        self._entries: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._entries[name] = t
        return t

    def add_uniform(self, name: str, shape: tuple, fan_in: int,
                    rng: np.random.Generator) -> Tensor:
        bound = 1.0 / math.sqrt(max(fan_in, 1))
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self):
        return len(self._entries)

    def names(self):
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def tensors(self):
        return list(self._entries.values())

    @property
    def gradients(self) -> dict[str, np.ndarray]:
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self._entries.items()
        }

    def zero_grad(self):
        for t in self._entries.values():
            t.grad = None

    def set_values(self, values: dict[str, np.ndarray]):
        for name, v in values.items():
            t = self._entries[name]
            if t.shape != np.asarray(v).shape:
                raise ShapeError(f"checkpoint shape mismatch for {name}")
            t.data = np.array(v, dtype=np.float64)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
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


def backward(loss: Tensor, store: ParameterStore | None = None):
    """Populate gradients of everything ``loss`` depends on.

    Gradients accumulate additively into ``.grad``; call ``zero_grad`` between
    independent passes. When ``store`` is given, parameters the loss does not
    depend on get exact-zero gradient buffers.
    """
    if loss.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss._parents:
        raise TapeError("backward called on a value with no recorded operations")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(_topo_order(loss)):
        if node._backward is not None:
            node._backward(node.grad)
            node.grad = None  # free intermediate gradients
    if store is not None:
        for t in store.tensors():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)


# -- finite-difference oracle ---------------------------------------------------


def finite_difference_check(f: Callable[[], Tensor], store: ParameterStore,
                            step: float = 1e-5) -> dict[str, float]:
    """Compare taped gradients of ``f()`` against central differences.

    ``f`` must be a deterministic closure over the parameters in ``store``
    returning a scalar Tensor. Returns per-parameter relative errors
    ``|g_ad - g_fd| / max(|g_ad| + |g_fd|, tiny)`` measured in L2 norm.
    """
    if not (0.0 < step <= 1e-2):
        raise ValueError(f"step must be in (0, 1e-2], got {step}")
    y1 = f().item()
    y2 = f().item()
    if y1 != y2:
        raise DeterminismError(f"f() returned {y1} then {y2}")

    store.zero_grad()
    backward(f(), store)
    analytic = {name: t.grad.copy() for name, t in store.items()}

    errors: dict[str, float] = {}
    with no_grad():
        for name, t in store.items():
            flat = t.data.ravel()
            fd = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = f().item()
                flat[i] = orig - step
                down = f().item()
                flat[i] = orig
                fd[i] = (up - down) / (2.0 * step)
            a = analytic[name].ravel()
            denom = max(np.linalg.norm(a) + np.linalg.norm(fd), 1e-12)
            errors[name] = float(np.linalg.norm(a - fd) / denom)
    return errors
