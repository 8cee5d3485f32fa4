"""Chord-Newton solve of g(t, x, z, p) = 0 and its implicit-function tangent."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg.lapack import dgetrs as _getrs

from .errors import AlgebraicConvergenceError, InvalidArgumentError, SingularJacobianError
from .tangent import jvp, partials


@dataclass(frozen=True)
class AlgebraicConfig:
    Q: int = 8
    eps_z: float = 1e-10
    tol_g: float = 1e-10
    max_restarts: int = 3

    def __post_init__(self):
        if self.Q < 1 or self.eps_z < 0 or self.tol_g <= 0 or self.max_restarts < 0:
            raise InvalidArgumentError("invalid AlgebraicConfig")


DEFAULT_ALGEBRAIC = AlgebraicConfig()


def _factor(M: np.ndarray, operation: str):
    if not np.all(np.isfinite(M)):
        raise SingularJacobianError("non-finite algebraic Jacobian", operation=operation)
    lu, piv = sla.lu_factor(M, check_finite=False)
    d = np.abs(np.diag(lu))
    if d.min() <= 1e-14 * max(1.0, d.max()):
        raise SingularJacobianError("algebraic Jacobian g_z is singular", operation=operation)
    return lu, piv


def algebraic_jacobian(g, t, x, z, p) -> np.ndarray:
    _, J = partials(g, t, x, z, p, wrt="z")
    return J["z"]


class ChordSolver:
    """Chord Newton with a reusable factorization.

    The factorization of ``G_z = g_z + eps_z I`` is built at the first guess and
    kept for later calls, so a caller that solves along a smooth path (RK
    stages, dense-output probes) re-factors only when the chord iteration stalls.
    With ``predict`` the starting point is the first-order extrapolation
    ``z_a + Z_x (x - x_a) + Z_t (t - t_a)`` from the last solution, with the
    implicit-function slopes taken at the factorization point.
    """

    def __init__(self, g, n_z: int, cfg: AlgebraicConfig = DEFAULT_ALGEBRAIC, reuse: bool = True,
                 predict: bool = False):
        self.g = g
        self.n_z = n_z
        self.cfg = cfg
        self.reuse = reuse
        self.predict = predict and reuse
        self._lu = None
        self._slopes = None
        self._anchor = None

    def _refresh(self, t, x, z, p):
        if self.predict:
            _, J = partials(self.g, t, x, z, p, wrt="tzx")
            G = J["z"] + self.cfg.eps_z * np.eye(self.n_z)
            self._lu = _factor(G, "solve_algebraic")
            rhs = np.column_stack([J["t"], J["x"]])
            self._slopes = -_getrs(self._lu[0], self._lu[1], rhs)[0]
        else:
            G = algebraic_jacobian(self.g, t, x, z, p) + self.cfg.eps_z * np.eye(self.n_z)
            self._lu = _factor(G, "solve_algebraic")

    def _guess(self, t, x, p, z_guess):
        a = self._anchor
        if a is None or a[3] is not p:
            return np.array(z_guess, dtype=float)
        ta, xa, za, _ = a
        S = self._slopes
        return za + S[:, 0] * (t - ta) + S[:, 1:] @ (x - xa)

    def solve(self, t, x, p, z_guess) -> np.ndarray:
        if self.n_z == 0:
            return np.zeros(0)
        cfg = self.cfg
        if self._lu is None or not self.reuse:
            z = np.array(z_guess, dtype=float)
            self._refresh(t, x, z, p)
        z = self._guess(t, x, p, z_guess) if self.predict else np.array(z_guess, dtype=float)
        z = self._solve(t, x, p, z)
        if self.predict:
            self._anchor = (t, np.array(x, dtype=float), z, p)
        return z

    def _solve(self, t, x, p, z):
        cfg = self.cfg
        with np.errstate(over="ignore", invalid="ignore"):
            r = np.asarray(self.g(t, x, z, p), dtype=float)
            res = np.abs(r).max()
            for attempt in range(cfg.max_restarts + 1):
                for _ in range(cfg.Q):
                    if res == 0.0:
                        return z
                    if not np.isfinite(res):
                        break
                    dz = _getrs(self._lu[0], self._lu[1], r)[0]
                    z_new = z - dz
                    # a round-off sized update needs no further residual check;
                    # iterating this far makes z a smooth function of (t, x, p)
                    if res <= cfg.tol_g and np.abs(dz).max() <= 1e-14 * (1.0 + np.abs(z).max()):
                        return z_new
                    r_new = np.asarray(self.g(t, x, z_new, p), dtype=float)
                    res_new = np.abs(r_new).max()
                    if not np.isfinite(res_new):
                        break  # diverging: keep the last finite iterate and refactor there
                    if res_new <= 1e-14 * (1.0 + np.abs(z_new).max()):
                        return z_new  # residual already at round-off
                    z, r, res = z_new, r_new, res_new
                if res <= cfg.tol_g:
                    return z
                if attempt < cfg.max_restarts:
                    self._refresh(t, x, z, p)
                    r = np.asarray(self.g(t, x, z, p), dtype=float)
                    res = np.abs(r).max()
        raise AlgebraicConvergenceError(
            f"chord Newton did not reach |g| <= {cfg.tol_g:g} at t={float(t):.6g}",
            operation="solve_algebraic",
        )


def solve_algebraic(g, t, x, p, z_guess, cfg: AlgebraicConfig = DEFAULT_ALGEBRAIC) -> np.ndarray:
    """Solve ``g(t, x, z, p) = 0`` for ``z`` starting from ``z_guess``."""
    z_guess = np.atleast_1d(np.asarray(z_guess, dtype=float))
    return ChordSolver(g, len(z_guess), cfg, reuse=False).solve(t, np.asarray(x, float), np.asarray(p, float), z_guess)


def algebraic_tangent(g, t, x, p, z, dt, dx, dp) -> np.ndarray:
    """IFT tangent ``dz = -g_z^{-1} (g_t dt + g_x dx + g_p dp)``.

    ``dt`` is ``(k,)``, ``dx`` is ``(n_x, k)``, ``dp`` is ``(n_p, k)``; one
    factorization of ``g_z`` serves all ``k`` directions.
    """
    z = np.asarray(z, dtype=float)
    nz = len(z)
    dt = np.atleast_1d(np.asarray(dt, dtype=float))
    k = dt.shape[0]
    if nz == 0:
        return np.zeros((0, k))
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    dx = np.asarray(dx, dtype=float).reshape(len(x), k)
    dp = np.asarray(dp, dtype=float).reshape(len(p), k)
    # seeds: k given directions followed by the identity on z
    DT = np.concatenate([dt, np.zeros(nz)])
    DX = np.concatenate([dx, np.zeros((len(x), nz))], axis=1)
    DZ = np.concatenate([np.zeros((nz, k)), np.eye(nz)], axis=1)
    DP = np.concatenate([dp, np.zeros((len(p), nz))], axis=1)
    b = jvp(g, t, x, z, p, DT, DX, DZ, DP)
    gz = b.tangents[:, k:]
    rhs = b.tangents[:, :k]
    lu = _factor(gz, "algebraic_tangent")
    return -sla.lu_solve(lu, rhs, check_finite=False)
