"""Forward-mode dual arithmetic with batched seed directions.

A :class:`Dual` carries a value array of shape ``s`` and a tangent array of
shape ``s + (k,)``: one column per seed direction.  Model functions are written
against the helpers in this module (``sin``, ``stack``, ...) so the same code
runs on plain ``numpy`` arrays and on duals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericalFailure


def _col(v):
    return np.asarray(v, dtype=float)[..., None]


def _mk(val, tan):
    """Construct without conversion (inputs already float arrays)."""
    d = object.__new__(Dual)
    d.val = val
    d.tan = tan
    return d


class Dual:
    __slots__ = ("val", "tan")
    __array_ufunc__ = None  # ndarray (op) Dual must defer to Dual

    def __init__(self, val, tan):
        self.val = np.asarray(val, dtype=float)
        self.tan = np.asarray(tan, dtype=float)

    # -- structure -------------------------------------------------------
    @property
    def k(self) -> int:
        return self.tan.shape[-1]

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self):
        return self.val.ndim

    def __len__(self):
        return len(self.val)

    def __iter__(self):
        for i in range(len(self.val)):
            yield self[i]

    def __getitem__(self, idx):
        return _mk(self.val[idx], self.tan[idx])

    def __float__(self):
        return float(self.val)

    def __repr__(self):
        return f"Dual(val={self.val!r}, tan={self.tan!r})"

    def _bcast(self, shape):
        if self.val.shape == tuple(shape):
            return self.tan
        return np.broadcast_to(self.tan, tuple(shape) + (self.k,))

    # -- arithmetic ------------------------------------------------------
    def __neg__(self):
        return _mk(-self.val, -self.tan)

    def __pos__(self):
        return self

    def __add__(self, other):
        if type(other) is Dual:
            val = self.val + other.val
            if self.val.shape == other.val.shape:
                return _mk(val, self.tan + other.tan)
            return _mk(val, self._bcast(val.shape) + other._bcast(val.shape))
        val = np.asarray(self.val + other, dtype=float)
        return _mk(val, self._bcast(val.shape))

    __radd__ = __add__

    def __sub__(self, other):
        if type(other) is Dual and self.val.shape == other.val.shape:
            return _mk(self.val - other.val, self.tan - other.tan)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if type(other) is Dual:
            return _mk(self.val * other.val, self.tan * other.val[..., None] + other.tan * self.val[..., None])
        c = np.asarray(other, dtype=float)
        return _mk(self.val * c, self.tan * c[..., None])

    __rmul__ = __mul__

    def reciprocal(self):
        inv = 1.0 / self.val
        return _mk(inv, -self.tan * (inv * inv)[..., None])

    def __truediv__(self, other):
        if isinstance(other, Dual):
            return self * other.reciprocal()
        return self * (1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, n):
        if isinstance(n, Dual):
            return exp(n * log(self))
        n = float(n)
        if n == 2.0:
            return self * self
        return Dual(self.val**n, self.tan * _col(n * self.val ** (n - 1.0)))

    def __rpow__(self, base):
        return exp(self * np.log(base))

    def sum(self, axis=None):
        if axis is None:
            return Dual(self.val.sum(), self.tan.reshape(-1, self.k).sum(axis=0))
        return Dual(self.val.sum(axis=axis), self.tan.sum(axis=axis))

    def __matmul__(self, other):
        # Dual vector/matrix times a constant matrix
        M = np.asarray(other, dtype=float)
        val = self.val @ M
        tan = np.moveaxis(np.moveaxis(self.tan, -1, 0) @ M, 0, -1)
        return Dual(val, tan)

    def __rmatmul__(self, other):
        M = np.asarray(other, dtype=float)
        return _mk(M @ self.val, M @ self.tan if self.ndim > 0 else M * self.tan)


def _unary(x, fval, fder):
    if isinstance(x, Dual):
        return Dual(fval(x.val), x.tan * _col(fder(x.val)))
    return fval(x)


def sin(x):
    return _unary(x, np.sin, np.cos)


def cos(x):
    return _unary(x, np.cos, lambda v: -np.sin(v))


def exp(x):
    return _unary(x, np.exp, np.exp)


def log(x):
    return _unary(x, np.log, lambda v: 1.0 / v)


def sqrt(x):
    return _unary(x, np.sqrt, lambda v: 0.5 / np.sqrt(v))


def tanh(x):
    return _unary(x, np.tanh, lambda v: 1.0 - np.tanh(v) ** 2)


def value(x):
    """Strip tangents (no-op on plain arrays)."""
    return x.val if isinstance(x, Dual) else np.asarray(x, dtype=float)


def _seed_count(items) -> int | None:
    for it in items:
        if type(it) is Dual:
            return it.k
    return None


def _as_dual(x, k):
    if isinstance(x, Dual):
        return x
    v = np.asarray(x, dtype=float)
    return Dual(v, np.zeros(v.shape + (k,)))


def stack(items: Sequence, axis: int = 0):
    k = _seed_count(items)
    if k is None:
        if axis == 0 and all(np.ndim(i) == 0 for i in items):
            return np.array(items, dtype=float)
        return np.stack([np.asarray(i, dtype=float) for i in items], axis=axis)
    ds = [_as_dual(i, k) for i in items]
    ax = axis if axis >= 0 else axis - 1
    return Dual(np.stack([d.val for d in ds], axis=axis), np.stack([d.tan for d in ds], axis=ax))


def concatenate(items: Sequence):
    k = _seed_count(items)
    if k is None:
        return np.concatenate([np.atleast_1d(i) for i in items]).astype(float, copy=False)
    ds = [_as_dual(i, k) for i in items]
    return _mk(
        np.concatenate([np.atleast_1d(d.val) for d in ds]),
        np.concatenate([d.tan.reshape(-1, k) for d in ds]),
    )


def dot(a, b):
    """Sum of elementwise products over the last axis."""
    return (a * b).sum() if _seed_count([a, b]) is not None else float(np.dot(a, b))


@dataclass(frozen=True)
class TangentBundle:
    value: np.ndarray
    tangents: np.ndarray  # value.shape + (k,)


def jvp(fn: Callable, t, x, z, p, dt, dx, dz, dp) -> TangentBundle:
    """Evaluate ``fn(t, x, z, p)`` with tangent matrices for every argument.

    ``dt`` has shape ``(k,)``; ``dx``, ``dz``, ``dp`` have shapes ``(n, k)``.
    """
    dt = np.asarray(dt, dtype=float)
    k = dt.shape[0]
    args = (
        Dual(t, dt),
        Dual(x, np.asarray(dx, dtype=float).reshape(len(x), k)),
        Dual(z, np.asarray(dz, dtype=float).reshape(len(z), k)),
        Dual(p, np.asarray(dp, dtype=float).reshape(len(p), k)),
    )
    with np.errstate(all="ignore"):
        out = fn(*args)
    if isinstance(out, Dual):
        val, tan = out.val, out.tan
    else:
        val = np.asarray(out, dtype=float)
        tan = np.zeros(val.shape + (k,))
    if not (np.isfinite(val).all() and np.isfinite(tan).all()):
        raise NumericalFailure("non-finite value or tangent", operation="tangent_eval")
    return TangentBundle(val, tan)


def tangent_eval(fn: Callable, point, seeds) -> TangentBundle:
    """Directional derivatives of ``fn`` at ``point=(t, x, z, p)``.

    ``seeds`` is a list of ``(dt, dx, dz, dp)`` directions; column ``j`` of the
    returned tangents is the exact derivative along seed ``j``.
    """
    t, x, z, p = point
    x, z, p = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (x, z, p))
    k = len(seeds)
    dt = np.zeros(k)
    dx = np.zeros((len(x), k))
    dz = np.zeros((len(z), k))
    dp = np.zeros((len(p), k))
    for j, (st, sx, sz, sp) in enumerate(seeds):
        sx, sz, sp = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (sx, sz, sp))
        if np.ndim(st) != 0 or (sx.shape, sz.shape, sp.shape) != (x.shape, z.shape, p.shape):
            raise InvalidArgumentError(f"seed {j} has wrong dimensions")
        dt[j], dx[:, j], dz[:, j], dp[:, j] = st, sx, sz, sp
    return jvp(fn, t, x, z, p, dt, dx, dz, dp)


def partials(fn: Callable, t, x, z, p, p_cols=None, wrt: str = "txzp"):
    """Value and Jacobian blocks of ``fn`` by identity seeding.

    Returns ``(value, {"t": ..., "x": ..., "z": ..., "p": ...})`` restricted to
    the letters in ``wrt``; ``p_cols`` restricts the parameter columns.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    p = np.asarray(p, dtype=float)
    nx, nz, np_ = len(x), len(z), len(p)
    cols = np.arange(np_) if p_cols is None else np.asarray(p_cols, dtype=int)
    sizes = {"t": 1, "x": nx, "z": nz, "p": len(cols)}
    k = sum(sizes[c] for c in wrt)
    dt = np.zeros(k)
    dx = np.zeros((nx, k))
    dz = np.zeros((nz, k))
    dp = np.zeros((np_, k))
    offs = {}
    o = 0
    for c in wrt:
        offs[c] = o
        n = sizes[c]
        if c == "t":
            dt[o] = 1.0
        elif c == "x":
            dx[:, o : o + n] = np.eye(nx)
        elif c == "z":
            dz[:, o : o + n] = np.eye(nz)
        else:
            dp[cols, np.arange(o, o + n)] = 1.0
        o += n
    b = jvp(fn, t, x, z, p, dt, dx, dz, dp)
    out = {}
    for c in wrt:
        blk = b.tangents[..., offs[c] : offs[c] + sizes[c]]
        out[c] = blk[..., 0] if c == "t" else blk
    return b.value, out
