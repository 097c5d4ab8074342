"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

This is internal plumbing for the trainable layers: every forward pass builds
a small graph of `Tensor` nodes, and `backward()` propagates vector-Jacobian
products back to the leaves. Only the operations the model actually needs are
implemented (elementwise arithmetic with broadcasting, dense affine maps,
embedding gather, reductions, and the SPD matrix primitives used by the
Gaussian scoring layer).

All data is float64; gradients are exact up to floating point, which is what
the finite-difference test suite checks.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg


class NumericalError(RuntimeError):
    """A matrix operation failed for numerical reasons (e.g. lost SPD-ness)."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A node in the computation graph holding a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None  # callable grad_out -> tuple of parent grads

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(constant(-1.0), as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(constant(-1.0), self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return mul(constant(-1.0), self)

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate gradients of this node into every reachable leaf."""
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                order.append(node)
                continue
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))

        if seed is None:
            seed = np.ones_like(self.data)
        self.grad = _as_array(seed)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            parent_grads = node._vjp(node.grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x, requires_grad=False)


def leaf(x) -> Tensor:
    return Tensor(x, requires_grad=True)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _make(a.data + b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _make(a.data * b.data, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    def vjp(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))
    return _make(a.data / b.data, (a, b), vjp)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)
    def vjp(g):
        return (g * (1.0 - out_data * out_data),)
    return _make(out_data, (a,), vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)
    def vjp(g):
        return (g * out_data,)
    return _make(out_data, (a,), vjp)


def log(a) -> Tensor:
    a = as_tensor(a)
    def vjp(g):
        return (g / a.data,)
    return _make(np.log(a.data), (a,), vjp)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    def vjp(g):
        return (g * out_data * (1.0 - out_data),)
    return _make(out_data, (a,), vjp)


def relu(a) -> Tensor:
    """max(a, 0); the subgradient at exactly 0 is taken as 0."""
    a = as_tensor(a)
    keep = a.data > 0
    def vjp(g):
        return (g * keep,)
    return _make(np.where(keep, a.data, 0.0), (a,), vjp)


def square(a) -> Tensor:
    a = as_tensor(a)
    return mul(a, a)


def clip_min(a, floor: float) -> Tensor:
    """max(a, floor); gradient is zero in the clipped region."""
    a = as_tensor(a)
    keep = a.data > floor
    def vjp(g):
        return (g * keep,)
    return _make(np.where(keep, a.data, floor), (a,), vjp)


def pow_floored(base, exponent, grad_floor: float = 1e-12) -> Tensor:
    """base ** exponent for base >= 0 with the base gradient evaluated at
    max(base, grad_floor).

    The forward value is exact (0 ** e = 0); only the derivative, which is
    singular at 0 for exponents < 1, is evaluated at the floored base.
    """
    base, exponent = as_tensor(base), as_tensor(exponent)
    out_data = np.power(base.data, exponent.data)
    floored = np.maximum(base.data, grad_floor)
    def vjp(g):
        g_base = g * exponent.data * np.power(floored, exponent.data - 1.0)
        g_exp = g * out_data * np.log(floored)
        return (_unbroadcast(g_base, base.shape), _unbroadcast(g_exp, exponent.shape))
    return _make(out_data, (base, exponent), vjp)


# shape / indexing ----------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    def vjp(g):
        return (g.reshape(old),)
    return _make(a.data.reshape(shape), (a,), vjp)


def expand_last(a) -> Tensor:
    """Append a trailing axis of length one (for attention-weight broadcast)."""
    a = as_tensor(a)
    return reshape(a, a.shape + (1,))


def gather(table, idx) -> Tensor:
    """table[idx] along axis 0; idx is an integer ndarray of any shape."""
    table = as_tensor(table)
    idx = np.asarray(idx)
    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)
    return _make(table.data[idx], (table,), vjp)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), constant(1.0 / n))


# linear algebra ------------------------------------------------------------

def dot(a, w) -> Tensor:
    """a @ w where w is a 2-D weight matrix and a has shape (..., k)."""
    a, w = as_tensor(a), as_tensor(w)
    if w.ndim != 2:
        raise ValueError("dot expects a 2-D weight on the right")
    k, m = w.shape
    def vjp(g):
        ga = np.matmul(g, w.data.T)
        gw = a.data.reshape(-1, k).T @ g.reshape(-1, m)
        return ga, gw
    return _make(np.matmul(a.data, w.data), (a, w), vjp)


def matmul2(a, b) -> Tensor:
    """Matrix product of two 2-D tensors."""
    a, b = as_tensor(a), as_tensor(b)
    def vjp(g):
        return g @ b.data.T, a.data.T @ g
    return _make(a.data @ b.data, (a, b), vjp)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    def vjp(g):
        return (g.T,)
    return _make(a.data.T, (a,), vjp)


def _spd_cholesky(a_data: np.ndarray, context: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(a_data)
    except np.linalg.LinAlgError as err:
        cond = float(np.linalg.cond(a_data)) if np.all(np.isfinite(a_data)) else float("inf")
        raise NumericalError(
            f"{context}: matrix is not positive definite "
            f"(condition number ~{cond:.3e})"
        ) from err


def spd_inverse(a) -> Tensor:
    """Inverse of a symmetric positive definite matrix via Cholesky."""
    a = as_tensor(a)
    chol = _spd_cholesky(a.data, "spd_inverse")
    inv = scipy.linalg.cho_solve((chol, True), np.eye(a.shape[0]))
    def vjp(g):
        return (-inv.T @ g @ inv.T,)
    return _make(inv, (a,), vjp)


def logdet_spd(a) -> Tensor:
    """log det of a symmetric positive definite matrix via Cholesky."""
    a = as_tensor(a)
    chol = _spd_cholesky(a.data, "logdet_spd")
    value = 2.0 * np.sum(np.log(np.diag(chol)))
    def vjp(g):
        inv = scipy.linalg.cho_solve((chol, True), np.eye(a.shape[0]))
        return (g * inv.T,)
    return _make(value, (a,), vjp)
