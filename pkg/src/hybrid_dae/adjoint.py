"""Discrete adjoint of the trapezoidal, event-split residual system.

The forward RK trajectory fixes the event sequence and serves as the initial
guess.  States are then re-solved by implicit trapezoidal stepping on uniform
normalized grids, with every event time found by Newton on its guard residual,
so all step and event residuals vanish to round-off.  The reverse sweep
propagates node loads through the step Jacobians, resolves the one-dimensional
multiplier freedom at each event from event-time stationarity, and
accumulates the parameter gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.special import expit

from .algebraic import ChordSolver
from .errors import AdjointLinearError, DegenerateEventError, InvalidArgumentError, NumericalFailure, StaleTrajectoryError
from .model import ModelSpec
from .simulator import EventSplitTrajectory
from .targets import HARD, BlendConfig, TargetSet
from .tangent import partials

DEN_REG = 1e-12
DEN_WARN = 1e-10
FEAS_MAX = 1e-7


# -- residuals and Jacobians -------------------------------------------------


@dataclass
class NodePartials:
    """Values and partial derivatives of f and g at one stored node."""

    f: np.ndarray
    f_t: np.ndarray
    f_x: np.ndarray
    f_z: np.ndarray
    f_p: np.ndarray
    g: np.ndarray
    g_t: np.ndarray
    g_x: np.ndarray
    g_z: np.ndarray
    g_p: np.ndarray


def node_partials(model: ModelSpec, t, x, z, p) -> NodePartials:
    cols = list(model.layout.opt_indices)
    fv, F = partials(model.f, t, x, z, p, p_cols=cols)
    n_x, n_z = len(x), len(z)
    if n_z:
        gv, G = partials(model.g, t, x, z, p, p_cols=cols)
    else:
        gv = np.zeros(0)
        G = {"t": np.zeros(0), "x": np.zeros((0, n_x)), "z": np.zeros((0, 0)), "p": np.zeros((0, len(cols)))}
    return NodePartials(fv, F["t"], F["x"], F["z"], F["p"], gv, G["t"], G["x"], G["z"], G["p"])


@dataclass
class StepJacobians:
    J_n: np.ndarray
    J_c: np.ndarray
    J_p: np.ndarray
    r_tc: np.ndarray
    r_tn: np.ndarray


def step_jacobians(nc: NodePartials, nn: NodePartials, h: float) -> StepJacobians:
    n_x, n_z = nc.f_x.shape[0], nc.g_z.shape[0]
    I = np.eye(n_x)
    J_n = np.block([[-I + 0.5 * h * nn.f_x, 0.5 * h * nn.f_z], [nn.g_x, nn.g_z]])
    J_c = np.block([[I + 0.5 * h * nc.f_x, 0.5 * h * nc.f_z], [np.zeros((n_z, n_x + n_z))]])
    J_p = np.vstack([0.5 * h * (nc.f_p + nn.f_p), nn.g_p])
    fbar = 0.5 * (nc.f + nn.f)
    r_tc = np.concatenate([-fbar + 0.5 * h * nc.f_t, np.zeros(n_z)])
    r_tn = np.concatenate([fbar + 0.5 * h * nn.f_t, nn.g_t])
    return StepJacobians(J_n, J_c, J_p, r_tc, r_tn)


def trapezoid_residual(model: ModelSpec, w_c, w_n, t_c, t_n, p) -> np.ndarray:
    """``[-x_n + x_c + h/2 (f_c + f_n); g(t_n, x_n, z_n)]``."""
    n_x = model.dims.n_x
    xc, zc, xn, zn = w_c[:n_x], w_c[n_x:], w_n[:n_x], w_n[n_x:]
    h = t_n - t_c
    fc = np.asarray(model.f(t_c, xc, zc, p), dtype=float)
    fn = np.asarray(model.f(t_n, xn, zn, p), dtype=float)
    gn = np.asarray(model.g_or_empty()(t_n, xn, zn, p), dtype=float)
    return np.concatenate([-xn + xc + 0.5 * h * (fc + fn), gn])


def _reset_rows(model: ModelSpec, e: int):
    mod = tuple(model.reset_indices[e])
    keep = tuple(j for j in range(model.dims.n_x) if j not in mod)
    return mod, keep


def event_residual(model: ModelSpec, tau, w_plus, w_minus, p, e_star) -> np.ndarray:
    """``[phi; reset rows; continuity rows; g at w+]``, length ``n_x + n_z + 1``."""
    n_x = model.dims.n_x
    xm, zm = w_minus[:n_x], w_minus[n_x:]
    xp, zp = w_plus[:n_x], w_plus[n_x:]
    mod, keep = _reset_rows(model, e_star)
    phi = model.guard_values(tau, xm, zm, p)[e_star]
    psi = np.asarray(model.reset(e_star, tau, xm, zm, p), dtype=float)
    gp = np.asarray(model.g_or_empty()(tau, xp, zp, p), dtype=float)
    rows = [np.array([phi]), xp[list(mod)] - psi[list(mod)], xp[list(keep)] - xm[list(keep)], gp]
    return np.concatenate(rows)


@dataclass
class EventJacobians:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    e_tau: np.ndarray


def event_jacobians(model: ModelSpec, tau, w_plus, w_minus, p, e_star) -> EventJacobians:
    n_x, n_z = model.dims.n_x, model.dims.n_z
    n_w = n_x + n_z
    cols = list(model.layout.opt_indices)
    k = len(cols)
    xm, zm = w_minus[:n_x], w_minus[n_x:]
    xp, zp = w_plus[:n_x], w_plus[n_x:]
    mod, keep = _reset_rows(model, e_star)
    _, Ph = partials(lambda t, x, z, q: model.guards(t, x, z, q)[e_star], tau, xm, zm, p, p_cols=cols)
    _, Ps = partials(lambda t, x, z, q: model.reset(e_star, t, x, z, q), tau, xm, zm, p, p_cols=cols)
    A = np.zeros((n_w + 1, n_w))
    B = np.zeros((n_w + 1, n_w))
    C = np.zeros((n_w + 1, k))
    e_tau = np.zeros(n_w + 1)
    B[0, :n_x], B[0, n_x:], C[0], e_tau[0] = Ph["x"], Ph["z"], Ph["p"], Ph["t"]
    r = 1
    for i in mod:
        A[r, i] = 1.0
        B[r, :n_x], B[r, n_x:] = -Ps["x"][i], -Ps["z"][i]
        C[r] = -Ps["p"][i]
        e_tau[r] = -Ps["t"][i]
        r += 1
    for j in keep:
        A[r, j] = 1.0
        B[r, j] = -1.0
        r += 1
    if n_z:
        _, Pg = partials(model.g, tau, xp, zp, p, p_cols=cols)
        A[r:, :n_x], A[r:, n_x:] = Pg["x"], Pg["z"]
        C[r:] = Pg["p"]
        e_tau[r:] = Pg["t"]
    return EventJacobians(A, B, C, e_tau)


# -- implicit trapezoidal forward solve ----------------------------------------


@dataclass
class DiscreteSegment:
    t_start: float
    t_end: float
    eta: np.ndarray
    W: np.ndarray  # (N, n_w)
    nodes: list  # NodePartials per node

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.eta * (self.t_end - self.t_start)


@dataclass
class DiscreteTrajectory:
    segments: list
    taus: np.ndarray
    event_indices: list
    T: float
    p: np.ndarray
    step_feasibility: float = 0.0
    event_feasibility: list = field(default_factory=list)


def _newton_node(model, w_c, nc: NodePartials, t_c, t_n, p, w_guess, max_iter=30):
    n_x = model.dims.n_x
    h = t_n - t_c
    w = np.array(w_guess, dtype=float)
    for _ in range(max_iter):
        nn = node_partials(model, t_n, w[:n_x], w[n_x:], p)
        R = np.concatenate([-w[:n_x] + w_c[:n_x] + 0.5 * h * (nc.f + nn.f), nn.g])
        J = step_jacobians(nc, nn, h).J_n
        try:
            dw = np.linalg.solve(J, -R)
        except np.linalg.LinAlgError as exc:
            raise AdjointLinearError(f"singular step Jacobian at t={t_n:.6g}", operation="trapezoid_solve") from exc
        if not np.all(np.isfinite(dw)):
            break
        if np.max(np.abs(dw), initial=0.0) <= 1e-15 * (1.0 + np.max(np.abs(w), initial=0.0)):
            return w, nn
        w = w + dw
    raise NumericalFailure(f"trapezoidal Newton did not converge at t={t_n:.6g}", operation="trapezoid_solve")


def solve_segment(model: ModelSpec, p, t_s, w_s, n_s: NodePartials, t_e, eta, want_dtau=False):
    """Trapezoidal nodes on ``t = t_s + eta (t_e - t_s)``; optionally ``dw/dt_e`` at every node."""
    n_x = model.dims.n_x
    n_w = len(w_s)
    L = t_e - t_s
    W = np.zeros((len(eta), n_w))
    W[0] = w_s
    nodes = [n_s]
    dW = np.zeros((len(eta), n_w)) if want_dtau else None
    for k in range(1, len(eta)):
        t_c, t_n = t_s + eta[k - 1] * L, t_s + eta[k] * L
        nc = nodes[-1]
        guess = np.concatenate([W[k - 1, :n_x] + (t_n - t_c) * nc.f, W[k - 1, n_x:]])
        W[k], nn = _newton_node(model, W[k - 1], nc, t_c, t_n, p, guess)
        nodes.append(nn)
        if want_dtau:
            sj = step_jacobians(nc, nn, t_n - t_c)
            rhs = sj.J_c @ dW[k - 1] + sj.r_tc * eta[k - 1] + sj.r_tn * eta[k]
            dW[k] = -np.linalg.solve(sj.J_n, rhs)
    return W, nodes, dW


def _solve_event_segment(model, p, t_s, w_s, n_s, tau0, eta, e, tol_event=1e-10, max_iter=25):
    n_x = model.dims.n_x
    tau = float(tau0)
    guard = lambda t, x, z, q: model.guards(t, x, z, q)[e]  # noqa: E731
    for _ in range(max_iter):
        if not tau > t_s:
            raise NumericalFailure("event time fell before its segment start", operation="trapezoid_solve")
        W, nodes, dW = solve_segment(model, p, t_s, w_s, n_s, tau, eta, want_dtau=True)
        wm = W[-1]
        F, D = partials(guard, tau, wm[:n_x], wm[n_x:], p, wrt="txz")
        Fp = float(D["t"] + D["x"] @ dW[-1, :n_x] + D["z"] @ dW[-1, n_x:])
        if Fp == 0.0:
            raise DegenerateEventError("guard derivative vanishes along the discrete path", operation="trapezoid_solve")
        step = float(F) / Fp
        if abs(step) <= 1e-15 * max(1.0, abs(tau)):
            return tau, W, nodes, float(F)
        tau -= step
    if abs(float(F)) <= tol_event:
        return tau, W, nodes, float(F)
    raise NumericalFailure("event-time Newton did not converge", operation="trapezoid_solve")


def trapezoid_forward(model: ModelSpec, p, event_indices, tau_guess, T: float, n_nodes: int = 33,
                      alg_cfg=None) -> DiscreteTrajectory:
    """Re-solve states and event times on frozen uniform eta grids with a frozen event sequence."""
    if n_nodes < 2:
        raise InvalidArgumentError("n_nodes must be at least 2")
    p = np.asarray(p, dtype=float)
    n_x = model.dims.n_x
    eta = np.linspace(0.0, 1.0, n_nodes)
    args = () if alg_cfg is None else (alg_cfg,)
    solver = ChordSolver(model.g_or_empty(), model.dims.n_z, *args, reuse=False)
    x0 = np.array(model.x0, dtype=float)
    z0 = solver.solve(0.0, x0, p, model.z0_guess)
    w = np.concatenate([x0, z0])
    t = 0.0
    ns = node_partials(model, t, x0, z0, p)
    segs, taus, efeas = [], [], []
    for m, e in enumerate(event_indices):
        tau, W, nodes, _ = _solve_event_segment(model, p, t, w, ns, tau_guess[m], eta, e)
        segs.append(DiscreteSegment(t, tau, eta, W, nodes))
        wm = W[-1]
        xp = np.array(model.reset(e, tau, wm[:n_x], wm[n_x:], p), dtype=float)
        zp = solver.solve(tau, xp, p, wm[n_x:])
        w = np.concatenate([xp, zp])
        efeas.append(float(np.max(np.abs(event_residual(model, tau, w, wm, p, e)))))
        taus.append(tau)
        t = tau
        ns = node_partials(model, t, xp, zp, p)
    if not t < T:
        raise NumericalFailure("discrete event times left the horizon", operation="trapezoid_solve")
    W, nodes, _ = solve_segment(model, p, t, w, ns, T, eta)
    segs.append(DiscreteSegment(t, T, eta, W, nodes))
    feas = 0.0
    for s in segs:
        tt = s.times
        for k in range(1, len(tt)):
            feas = max(feas, float(np.max(np.abs(trapezoid_residual(model, s.W[k - 1], s.W[k], tt[k - 1], tt[k], p)))))
    return DiscreteTrajectory(segs, np.array(taus), list(event_indices), float(T), p, feas, efeas)


def trapezoid_from_rk(model: ModelSpec, traj: EventSplitTrajectory, n_nodes: int = 33) -> DiscreteTrajectory:
    if traj.saturated:
        raise InvalidArgumentError("cannot re-solve a saturated trajectory", operation="trapezoid_forward")
    return trapezoid_forward(model, traj.p, traj.event_indices, traj.event_times, traj.T, n_nodes)


# -- discrete loss and its loads -------------------------------------------------


@dataclass
class LossLoads:
    J: float
    ell_W: list  # per segment (N, n_w)
    ell_p: np.ndarray
    ell_tau: np.ndarray
    y_hat: np.ndarray


def _linear_at(seg: DiscreteSegment, t: float, n_x: int):
    """Linear interpolation of x; returns (X, j, s, u, interior)."""
    a, b = seg.t_start, seg.t_end
    L = b - a
    if t <= a or L <= 0:
        return seg.W[0, :n_x], 0, 0.0, 0.0, t == a and L > 0
    if t >= b:
        return seg.W[-1, :n_x], len(seg.eta) - 2, 1.0, 1.0, t == b
    u = (t - a) / L
    eta = seg.eta
    j = min(max(int(np.searchsorted(eta, u, side="right")) - 1, 0), len(eta) - 2)
    s = (u - eta[j]) / (eta[j + 1] - eta[j])
    return (1 - s) * seg.W[j, :n_x] + s * seg.W[j + 1, :n_x], j, s, u, True


def _select_hard(segs, t, T):
    tol = 1e-12 * max(1.0, T)
    if not (-tol <= t <= T + tol):
        raise InvalidArgumentError(f"target time {t} outside [0, {T}]", operation="select_hard")
    for k in range(len(segs) - 1, -1, -1):
        if segs[k].t_start <= t <= segs[k].t_end:
            return k
    return 0 if t < segs[0].t_start else len(segs) - 1


def loss_loads(model: ModelSpec, dtraj: DiscreteTrajectory, targets: TargetSet, blend: BlendConfig = HARD) -> LossLoads:
    """Discrete loss from linearly interpolated nodes and its closed-form partial loads."""
    if targets.data is None:
        raise InvalidArgumentError("targets carry no data", operation="loss_loads")
    p = dtraj.p
    segs = dtraj.segments
    n_x, n_z, n_y = model.dims.n_x, model.dims.n_z, model.dims.n_y
    cols = list(model.layout.opt_indices)
    K = len(segs)
    N = targets.N
    ell_W = [np.zeros_like(s.W) for s in segs]
    ell_p = np.zeros(len(cols))
    dJ_da = np.zeros(K)
    dJ_db = np.zeros(K)
    solver = ChordSolver(model.g_or_empty(), n_z, reuse=False)
    Yh = np.zeros((N, n_y))
    J = 0.0
    a = np.array([s.t_start for s in segs])
    b = np.array([s.t_end for s in segs])
    for i, t in enumerate(targets.times):
        cand = [_linear_at(s, t, n_x) for s in segs]
        if blend.mode == "hard":
            kstar = _select_hard(segs, t, dtraj.T)
            wbar = np.zeros(K)
            wbar[kstar] = 1.0
            xh = cand[kstar][0]
        else:
            sa = expit(blend.beta * (t - a))
            sb = expit(blend.beta * (b - t))
            w = sa * sb
            denom = w.sum() + blend.eps_omega
            wbar = w / denom
            xh = sum(wbar[k] * cand[k][0] for k in range(K))
            kstar = int(np.argmax(w))
        seg_near = segs[kstar]
        zw = seg_near.W[int(np.argmin(np.abs(seg_near.times - t))), n_x:]
        zh = solver.solve(t, xh, p, zw)
        yh, H = partials(model.output, t, xh, zh, p, p_cols=cols, wrt="xzp")
        yh = np.asarray(yh, dtype=float).reshape(n_y)
        Hx, Hz, Hp = (H[c].reshape(n_y, -1) for c in ("x", "z", "p"))
        r = yh - targets.data[i]
        Yh[i] = yh
        J += float(r @ r) / N
        v = (2.0 / N) * r
        if n_z:
            _, G = partials(model.g, t, xh, zh, p, p_cols=cols, wrt="xzp")
            lu = sla.lu_factor(G["z"])
            Hx = Hx - Hz @ sla.lu_solve(lu, G["x"])
            Hp = Hp - Hz @ sla.lu_solve(lu, G["p"])
        gx = Hx.T @ v
        ell_p += Hp.T @ v
        for k in range(K):
            if wbar[k] == 0.0:
                continue
            X, j, s, u, interior = cand[k]
            ell_W[k][j, :n_x] += wbar[k] * (1 - s) * gx
            ell_W[k][j + 1, :n_x] += wbar[k] * s * gx
            L = b[k] - a[k]
            if interior and L > 0:
                dXdu = (segs[k].W[j + 1, :n_x] - segs[k].W[j, :n_x]) / (segs[k].eta[j + 1] - segs[k].eta[j])
                gu = wbar[k] * float(gx @ dXdu)
                dJ_da[k] += gu * (u - 1.0) / L
                dJ_db[k] += gu * (-u / L)
            if blend.mode == "soft":
                gw = float(gx @ (X - xh)) / denom
                dJ_da[k] += gw * (-blend.beta * w[k] * (1.0 - sa[k]))
                dJ_db[k] += gw * (blend.beta * w[k] * (1.0 - sb[k]))
    ell_tau = np.array([dJ_db[m] + dJ_da[m + 1] for m in range(K - 1)])
    return LossLoads(J, ell_W, ell_p, ell_tau, Yh)


def discrete_loss(model: ModelSpec, p_opt, targets: TargetSet, event_indices, tau_guess, T, n_nodes=33,
                  blend: BlendConfig = HARD) -> float:
    """Objective of the discrete residual system, for finite-difference checks."""
    p = model.full_params(p_opt)
    d = trapezoid_forward(model, p, event_indices, tau_guess, T, n_nodes)
    return loss_loads(model, d, targets, blend).J


# -- adjoint operations ----------------------------------------------------------


def step_adjoint(a_n, step: StepJacobians, ell_c, lu=None):
    """``(lambda, a_c, dq_p, d_c, d_n)`` for one trapezoidal step."""
    try:
        lu = lu if lu is not None else sla.lu_factor(step.J_n, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise AdjointLinearError("step Jacobian factorization failed", operation="step_adjoint") from exc
    d = np.abs(np.diag(lu[0]))
    if d.min(initial=np.inf) <= 1e-14 * max(1.0, d.max(initial=0.0)):
        raise AdjointLinearError("singular step Jacobian J_n", operation="step_adjoint")
    lam = sla.lu_solve(lu, -np.asarray(a_n, dtype=float), trans=1)
    a_c = ell_c + step.J_c.T @ lam
    return lam, a_c, step.J_p.T @ lam, float(step.r_tc @ lam), float(step.r_tn @ lam)


@dataclass
class SweepResult:
    a_s: np.ndarray
    qp: np.ndarray
    qts: float
    qte: float


class _SegmentOps:
    """Step Jacobians and factorizations of one segment, reused by both sweeps."""

    def __init__(self, seg: DiscreteSegment):
        tt = seg.times
        self.eta = seg.eta
        self.steps = [step_jacobians(seg.nodes[k - 1], seg.nodes[k], tt[k] - tt[k - 1]) for k in range(1, len(tt))]
        self.lus = []
        for k, s in enumerate(self.steps):
            try:
                self.lus.append(sla.lu_factor(s.J_n))
            except (ValueError, np.linalg.LinAlgError) as exc:
                raise AdjointLinearError("step Jacobian factorization failed", operation="segment_sweep", block=k) from exc


def segment_sweep(ops: _SegmentOps, terminal_load, node_loads) -> SweepResult:
    eta = ops.eta
    a = np.asarray(terminal_load, dtype=float) + node_loads[-1]
    qp = np.zeros(ops.steps[0].J_p.shape[1]) if ops.steps else np.zeros(0)
    qts = qte = 0.0
    for k in range(len(ops.steps) - 1, -1, -1):
        _, a, dqp, dc, dn = step_adjoint(a, ops.steps[k], node_loads[k], ops.lus[k])
        qp += dqp
        qts += dc * (1.0 - eta[k]) + dn * (1.0 - eta[k + 1])
        qte += dc * eta[k] + dn * eta[k + 1]
    return SweepResult(a, qp, qts, qte)


def event_adjoint(ev: EventJacobians, a_plus):
    """Minimum-norm ``mu0`` with ``A^T mu0 = -a_plus`` and unit null vector ``v`` of ``A^T``."""
    At = ev.A.T
    U, s, Vt = np.linalg.svd(At)
    n_w = At.shape[0]
    if n_w and s[-1] <= 1e-12 * max(1.0, s[0]):
        raise DegenerateEventError("event Jacobian A is rank deficient", operation="event_adjoint")
    v = Vt[-1].copy()
    nz = np.flatnonzero(np.abs(v) > 1e-12 * np.max(np.abs(v)))
    if v[nz[0]] < 0:
        v = -v
    # minimum-norm solution via the same decomposition
    mu0 = Vt[:n_w].T @ ((U.T @ -np.asarray(a_plus, dtype=float)) / s) if n_w else np.zeros(1)
    return mu0, v


@dataclass
class PendingEvent:
    a_minus_0: np.ndarray
    a_minus_v: np.ndarray
    qp_0: np.ndarray
    qp_v: np.ndarray
    qtau_0: float
    qtau_v: float


def build_pending(ev: EventJacobians, mu0, v, ell_tau_m: float, qtau_plus: float) -> PendingEvent:
    return PendingEvent(
        ev.B.T @ mu0, ev.B.T @ v, ev.C.T @ mu0, ev.C.T @ v,
        float(ell_tau_m + qtau_plus + ev.e_tau @ mu0), float(ev.e_tau @ v),
    )


def resolve_pending(pending: PendingEvent, seg0: SweepResult, segv: SweepResult):
    """``(c, a_s, dq_p, qts_resolved, denominator)`` from the two sweeps of the pre-event segment."""
    num = pending.qtau_0 + seg0.qte
    den = pending.qtau_v + segv.qte
    if abs(den) < DEN_REG:
        den = den + (DEN_REG if den >= 0 else -DEN_REG)
    c = -num / den
    a_s = seg0.a_s + c * segv.a_s
    dqp = (pending.qp_0 + seg0.qp) + c * (pending.qp_v + segv.qp)
    return c, a_s, dqp, seg0.qts + c * segv.qts, den


@dataclass
class AdjointReport:
    loss: float
    grad: np.ndarray
    per_event: list
    feasibility_max: float
    warnings: list

    def to_json(self) -> dict:
        return {
            "loss": self.loss,
            "grad": [float(g) for g in self.grad],
            "per_event": self.per_event,
            "feasibility_max": self.feasibility_max,
            "warnings": list(self.warnings),
        }


def adjoint_on_discrete(model: ModelSpec, dtraj: DiscreteTrajectory, targets: TargetSet,
                        blend: BlendConfig = HARD, mu0_shift: float = 0.0) -> AdjointReport:
    """Reverse sweep over a feasible discrete trajectory.

    ``mu0_shift`` moves every particular event multiplier along its null
    direction; the resolved gradient does not depend on it.
    """
    feas = max([dtraj.step_feasibility] + list(dtraj.event_feasibility))
    if feas > FEAS_MAX:
        raise StaleTrajectoryError(f"residual feasibility {feas:.3e} exceeds {FEAS_MAX:g}", operation="gradient_adjoint")
    p = dtraj.p
    n_x, n_z = model.dims.n_x, model.dims.n_z
    loads = loss_loads(model, dtraj, targets, blend)
    segs = dtraj.segments
    K = len(segs)
    q_p = loads.ell_p.copy()
    ops = _SegmentOps(segs[-1])
    res = segment_sweep(ops, np.zeros(n_x + n_z), loads.ell_W[-1])
    q_p += res.qp
    a_plus, qtau_plus = res.a_s, res.qts
    per_event = [None] * (K - 1)
    warnings = []
    for m in range(K - 2, -1, -1):
        e = dtraj.event_indices[m]
        tau = dtraj.taus[m]
        w_minus, w_plus = segs[m].W[-1], segs[m + 1].W[0]
        ev = event_jacobians(model, tau, w_plus, w_minus, p, e)
        mu0, v = event_adjoint(ev, a_plus)
        mu0 = mu0 + mu0_shift * v
        pend = build_pending(ev, mu0, v, loads.ell_tau[m], qtau_plus)
        ops = _SegmentOps(segs[m])
        s0 = segment_sweep(ops, pend.a_minus_0, loads.ell_W[m])
        sv = segment_sweep(ops, pend.a_minus_v, [np.zeros(n_x + n_z)] * len(segs[m].eta))
        c, a_plus, dqp, qtau_plus, den = resolve_pending(pend, s0, sv)
        q_p += dqp
        if abs(den) < DEN_WARN:
            warnings.append(f"near-singular event-time stationarity at event {m} (denominator {den:.3e})")
        per_event[m] = {"tau": float(tau), "event_index": int(e), "c": float(c), "denominator": float(den),
                        "feasibility": float(dtraj.event_feasibility[m])}
    if n_z:
        n0 = segs[0].nodes[0]
        lam0 = np.linalg.solve(n0.g_z.T, -a_plus[n_x:])
        q_p += n0.g_p.T @ lam0
    return AdjointReport(loads.J, q_p, per_event, feas, warnings)


def gradient_adjoint(model: ModelSpec, traj: EventSplitTrajectory, targets: TargetSet,
                     blend: BlendConfig = HARD, n_nodes: int = 33):
    """``(loss, grad, report)`` of the discrete objective built around an RK trajectory."""
    if traj.saturated:
        return float("inf"), np.zeros(model.dims.n_opt), None
    dtraj = trapezoid_from_rk(model, traj, n_nodes)
    rep = adjoint_on_discrete(model, dtraj, targets, blend)
    return rep.loss, rep.grad, rep
