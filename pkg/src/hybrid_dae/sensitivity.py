"""Forward state sensitivities S = dx/dp_opt: smooth flow, event time, and jump."""

from __future__ import annotations

import numpy as np

from .algebraic import algebraic_tangent
from .errors import GrazingEventError
from .model import ModelSpec
from .tangent import jvp


def opt_selector(model: ModelSpec) -> np.ndarray:
    """``(n_p, n_opt)`` matrix whose columns are unit vectors at the optimized indices."""
    E = np.zeros((model.dims.n_p, model.dims.n_opt))
    E[list(model.layout.opt_indices), np.arange(model.dims.n_opt)] = 1.0
    return E


def z_sensitivity(model: ModelSpec, t, x, z, S, p, Ep=None) -> np.ndarray:
    """dz/dp_opt at fixed time given dx/dp_opt = S."""
    Ep = opt_selector(model) if Ep is None else Ep
    k = Ep.shape[1]
    return algebraic_tangent(model.g_or_empty(), t, x, p, z, np.zeros(k), S, Ep)


def z_rate(model: ModelSpec, t, x, z, xdot, p) -> np.ndarray:
    """Total time derivative of z along the flow."""
    return algebraic_tangent(model.g_or_empty(), t, x, p, z, np.ones(1), xdot[:, None], np.zeros((len(p), 1)))[:, 0]


def sensitivity_rhs(model: ModelSpec, t, x, z, S, p, Ep=None) -> np.ndarray:
    """Variational right-hand side f_x S + f_z Z_p + f_p over the optimized columns."""
    Ep = opt_selector(model) if Ep is None else Ep
    k = Ep.shape[1]
    Zp = z_sensitivity(model, t, x, z, S, p, Ep)
    return jvp(model.f, t, x, z, p, np.zeros(k), S, Zp, Ep).tangents


def _guard_e(model, e):
    return lambda t, x, z, p: model.guards(t, x, z, p)[e]


def _reset_e(model, e):
    return lambda t, x, z, p: model.reset(e, t, x, z, p)


def guard_rate(model: ModelSpec, e: int, t, x, z, p):
    """(phi_dot, f, zdot) along the flow just before the event."""
    f = np.asarray(model.f(t, x, z, p), dtype=float)
    zd = z_rate(model, t, x, z, f, p)
    b = jvp(_guard_e(model, e), t, x, z, p, np.ones(1), f[:, None], zd[:, None], np.zeros((len(p), 1)))
    return float(b.tangents[0]), f, zd


def event_time_sensitivity(model: ModelSpec, tau, x_minus, z_minus, S_minus, p, e_star,
                           tol_transv: float = 1e-8, Ep=None):
    """dtau/dp_opt by differentiating phi(tau, x(tau), z(tau), p) = 0.

    Returns ``(dtau, phi_dot)``.  Raises GrazingEventError if the crossing is
    not transversal.
    """
    Ep = opt_selector(model) if Ep is None else Ep
    k = Ep.shape[1]
    phidot, f, zd = guard_rate(model, e_star, tau, x_minus, z_minus, p)
    if abs(phidot) < tol_transv:
        raise GrazingEventError(
            f"guard {e_star} crosses tangentially at tau={tau:.12g} (dphi/dt={phidot:.3e})",
            operation="event_time_sensitivity",
        )
    Zp = z_sensitivity(model, tau, x_minus, z_minus, S_minus, p, Ep)
    b = jvp(_guard_e(model, e_star), tau, x_minus, z_minus, p, np.zeros(k), S_minus, Zp, Ep)
    return -b.tangents / phidot, phidot


def sensitivity_jump(model: ModelSpec, tau, dtau, x_minus, z_minus, S_minus, p, e_star,
                     x_plus, z_plus, Ep=None) -> np.ndarray:
    """Post-event sensitivity S+ from the chain rule through the reset at a moving event time."""
    Ep = opt_selector(model) if Ep is None else Ep
    k = Ep.shape[1]
    dtau = np.asarray(dtau, dtype=float).reshape(k)
    f_m = np.asarray(model.f(tau, x_minus, z_minus, p), dtype=float)
    zd_m = z_rate(model, tau, x_minus, z_minus, f_m, p)
    Zp = z_sensitivity(model, tau, x_minus, z_minus, S_minus, p, Ep)
    dx = S_minus + np.outer(f_m, dtau)
    dz = Zp + np.outer(zd_m, dtau)
    dxp = jvp(_reset_e(model, e_star), tau, x_minus, z_minus, p, dtau, dx, dz, Ep).tangents
    f_p = np.asarray(model.f(tau, x_plus, z_plus, p), dtype=float)
    return dxp - np.outer(f_p, dtau)
