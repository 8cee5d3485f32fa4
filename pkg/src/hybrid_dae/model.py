"""Hybrid DAE model contract and parameter layout."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class Dims:
    n_x: int
    n_z: int
    n_p: int
    n_opt: int
    n_e: int
    n_y: int

    def __post_init__(self):
        if min(self.n_x, self.n_z, self.n_p, self.n_opt, self.n_e, self.n_y) < 0:
            raise InvalidArgumentError("dimension counts must be non-negative")
        if self.n_x < 1 or self.n_y < 1:
            raise InvalidArgumentError("n_x and n_y must be at least 1")
        if self.n_opt > self.n_p:
            raise InvalidArgumentError("n_opt cannot exceed n_p")

    @property
    def n_w(self) -> int:
        return self.n_x + self.n_z


@dataclass(frozen=True)
class ParameterLayout:
    p_base: np.ndarray
    opt_indices: tuple[int, ...]

    def __post_init__(self):
        base = np.asarray(self.p_base, dtype=float).copy()
        base.setflags(write=False)
        object.__setattr__(self, "p_base", base)
        idx = tuple(int(i) for i in self.opt_indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise InvalidArgumentError("opt_indices must be strictly increasing")
        if idx and (idx[0] < 0 or idx[-1] >= len(base)):
            raise InvalidArgumentError("opt_indices out of range")
        object.__setattr__(self, "opt_indices", idx)

    @property
    def n_opt(self) -> int:
        return len(self.opt_indices)

    def extract(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(p, dtype=float)[list(self.opt_indices)]


def assemble_full_params(layout: ParameterLayout, p_opt) -> np.ndarray:
    p_opt = np.atleast_1d(np.asarray(p_opt, dtype=float))
    if p_opt.shape != (layout.n_opt,):
        raise InvalidArgumentError(
            f"expected {layout.n_opt} optimized parameters, got {p_opt.shape[0]}",
            operation="assemble_full_params",
        )
    p = np.array(layout.p_base, dtype=float)
    p[list(layout.opt_indices)] = p_opt
    return p


Fn = Callable  # (t, x, z, p) -> array or Dual


@dataclass(frozen=True)
class ModelSpec:
    """One semi-explicit hybrid DAE.

    ``guards`` returns all ``n_e`` guard values as one vector (positive before
    an event, non-positive after).  ``reset(e, t, x, z, p)`` returns the full
    post-event differential state; entries outside ``reset_indices[e]`` must be
    returned unchanged.  ``h=None`` means the output is ``x`` itself.
    """

    name: str
    dims: Dims
    f: Fn
    g: Optional[Fn]
    layout: ParameterLayout
    x0: np.ndarray
    z0_guess: np.ndarray
    h: Optional[Fn] = None
    guards: Optional[Fn] = None
    reset: Optional[Callable] = None
    reset_indices: tuple[tuple[int, ...], ...] = ()
    T: float = 1.0
    state_names: tuple[str, ...] = field(default=())
    param_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        d = self.dims
        if len(self.x0) != d.n_x or len(self.z0_guess) != d.n_z:
            raise InvalidArgumentError("x0/z0_guess do not match dims")
        if d.n_z > 0 and self.g is None:
            raise InvalidArgumentError("n_z > 0 requires an algebraic map g")
        if d.n_e > 0 and (self.guards is None or self.reset is None):
            raise InvalidArgumentError("n_e > 0 requires guards and resets")
        if len(self.reset_indices) != d.n_e:
            raise InvalidArgumentError("reset_indices must list one index set per guard")
        if d.n_opt != self.layout.n_opt or d.n_p != len(self.layout.p_base):
            raise InvalidArgumentError("layout does not match dims")
        if self.h is None and d.n_y != d.n_x:
            raise InvalidArgumentError("without an output map n_y must equal n_x")

    def full_params(self, p_opt) -> np.ndarray:
        return assemble_full_params(self.layout, p_opt)

    def with_params(self, p_base: Sequence[float] | None = None, opt_indices=None) -> "ModelSpec":
        from dataclasses import replace

        lay = ParameterLayout(
            self.layout.p_base if p_base is None else np.asarray(p_base, dtype=float),
            self.layout.opt_indices if opt_indices is None else tuple(opt_indices),
        )
        dims = Dims(self.dims.n_x, self.dims.n_z, self.dims.n_p, lay.n_opt, self.dims.n_e, self.dims.n_y)
        return replace(self, layout=lay, dims=dims)

    def output(self, t, x, z, p):
        return x if self.h is None else self.h(t, x, z, p)

    def guard_values(self, t, x, z, p) -> np.ndarray:
        if self.dims.n_e == 0:
            return np.zeros(0)
        return np.asarray(self.guards(t, x, z, p), dtype=float)

    def g_or_empty(self):
        return self.g if self.g is not None else _empty_g


def _empty_g(t, x, z, p):
    return np.zeros(0)
