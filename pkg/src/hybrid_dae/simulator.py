"""Segmented simulation of a hybrid DAE: reduced flow, guards, events and resets."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .algebraic import DEFAULT_ALGEBRAIC, AlgebraicConfig, ChordSolver
from .errors import (
    AlgebraicConvergenceError,
    BracketError,
    GrazingEventError,
    InternalError,
    InvalidArgumentError,
    ReinitFailure,
    SingularJacobianError,
)
from .integrator import DOPRI5, DenseStep
from .model import ModelSpec
from .sensitivity import event_time_sensitivity, guard_rate, opt_selector, sensitivity_jump, sensitivity_rhs

KIND_PADDING, KIND_SEGMENT, KIND_EVENT = 0, 1, 2


@dataclass(frozen=True)
class SimConfig:
    K_max: int = 64
    eps_phi: float = 1e-9
    C_big: float = 1e6
    rtol: float = 1e-8
    atol: float = 1e-8
    h_init: Optional[float] = None
    h_min: float = 1e-12
    h_max: float = np.inf
    n_nodes_min: int = 33
    tol_event: float = 1e-10
    bisect_iters: int = 12
    tol_transv: float = 1e-8
    event_samples: int = 1
    algebraic: AlgebraicConfig = DEFAULT_ALGEBRAIC

    def __post_init__(self):
        if self.K_max < 1:
            raise InvalidArgumentError("K_max must be at least 1")
        if self.eps_phi <= 0 or self.C_big <= 0:
            raise InvalidArgumentError("eps_phi and C_big must be positive")
        if self.rtol <= 0 or self.atol <= 0:
            raise InvalidArgumentError("tolerances must be positive")
        if self.n_nodes_min < 2 or self.event_samples < 1 or self.bisect_iters < 0:
            raise InvalidArgumentError("invalid node/sample counts")


@dataclass
class SegmentBlock:
    t_start: float
    t_end: float
    eta: np.ndarray
    nodes_x: np.ndarray
    nodes_z: np.ndarray
    nodes_xdot: np.ndarray
    is_real: bool = True
    nodes_S: Optional[np.ndarray] = None  # (N, n_x, n_opt) when sensitivities were carried
    nodes_Sdot: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None

    @cached_property
    def times(self) -> np.ndarray:
        return self.t_start + self.eta * (self.t_end - self.t_start)

    @property
    def n_nodes(self) -> int:
        return len(self.eta)


@dataclass
class EventBlock:
    tau: float
    event_index: int
    x_minus: np.ndarray
    z_minus: np.ndarray
    x_plus: np.ndarray
    z_plus: np.ndarray
    phi_dot: float = float("nan")
    dtau: Optional[np.ndarray] = None
    S_minus: Optional[np.ndarray] = None
    S_plus: Optional[np.ndarray] = None

    @property
    def w_minus(self):
        return self.x_minus, self.z_minus

    @property
    def w_plus(self):
        return self.x_plus, self.z_plus


def _padding_segment(n_x: int, n_z: int) -> SegmentBlock:
    return SegmentBlock(0.0, 0.0, np.zeros(0), np.zeros((0, n_x)), np.zeros((0, n_z)), np.zeros((0, n_x)), is_real=False)


@dataclass
class EventSplitTrajectory:
    segments: list
    events: list
    K_max: int
    saturated: bool
    T: float
    p: np.ndarray
    warnings: list = field(default_factory=list)
    sensitivity_error: Optional[str] = None
    n_steps: int = 0

    @property
    def n_events(self) -> int:
        return len(self.events)

    @property
    def blocks(self) -> list:
        """Fixed-capacity alternating block list of length ``2 K_max - 1``."""
        n_x = len(self.segments[0].nodes_x[0])
        n_z = self.segments[0].nodes_z.shape[1]
        out = []
        for k in range(self.K_max):
            out.append(self.segments[k] if k < len(self.segments) else _padding_segment(n_x, n_z))
            if k < self.K_max - 1:
                out.append(self.events[k] if k < len(self.events) else None)
        return out

    @property
    def kinds(self) -> np.ndarray:
        codes = []
        for k in range(self.K_max):
            codes.append(KIND_SEGMENT if k < len(self.segments) else KIND_PADDING)
            if k < self.K_max - 1:
                codes.append(KIND_EVENT if k < len(self.events) else KIND_PADDING)
        return np.array(codes, dtype=int)

    @property
    def event_times(self) -> np.ndarray:
        return np.array([ev.tau for ev in self.events])

    @property
    def event_indices(self) -> list:
        return [ev.event_index for ev in self.events]

    @property
    def has_sensitivities(self) -> bool:
        return self.segments[0].nodes_S is not None


# -- elementary operations ---------------------------------------------------


def reduced_rhs(model: ModelSpec, t, x, p, z_warm, cfg: AlgebraicConfig = DEFAULT_ALGEBRAIC):
    """``(xdot, z)`` with ``z`` solved from the algebraic constraint."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    z = ChordSolver(model.g_or_empty(), model.dims.n_z, cfg, reuse=False).solve(t, x, p, z_warm)
    return np.asarray(model.f(t, x, z, p), dtype=float), z


def active_guard_mask(model: ModelSpec, t_s, x_s, z_s, p, eps_phi: float) -> np.ndarray:
    return model.guard_values(t_s, x_s, z_s, p) > eps_phi


def _composite(vals: np.ndarray, mask: np.ndarray, C_big: float) -> float:
    if not np.any(mask):
        return float(C_big)
    return float(np.min(np.where(mask, vals, C_big)))


def composite_guard(model: ModelSpec, t, x, p, mask, z_warm, C_big: float = 1e6,
                    cfg: AlgebraicConfig = DEFAULT_ALGEBRAIC) -> float:
    """Minimum of the active guards, masked entries replaced by ``C_big``."""
    z = ChordSolver(model.g_or_empty(), model.dims.n_z, cfg, reuse=False).solve(t, x, p, z_warm)
    return _composite(model.guard_values(t, x, z, p), np.asarray(mask, bool), C_big)


def locate_event(t_lo: float, t_hi: float, phi: Callable[[float], float], bisect_iters: int = 12,
                 tol_event: float = 1e-10) -> float:
    """Root of ``phi`` in ``[t_lo, t_hi]`` given ``phi(t_lo) > 0 >= phi(t_hi)``.

    Bisection narrows the bracket, then up to five secant steps that stay inside
    the bracket polish the root to round-off.
    """
    lo, hi = float(t_lo), float(t_hi)
    f_lo, f_hi = phi(lo), phi(hi)
    if not (f_lo > 0.0 >= f_hi):
        raise BracketError(
            f"no sign change on [{lo:.12g}, {hi:.12g}] (phi={f_lo:.3e}, {f_hi:.3e})", operation="locate_event"
        )
    best, f_best = hi, f_hi
    for _ in range(bisect_iters):
        if hi - lo <= 4e-16 * max(1.0, abs(hi)) or f_hi == 0.0:
            break
        mid = 0.5 * (lo + hi)
        f_mid = phi(mid)
        if f_mid > 0.0:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
    best, f_best = (lo, f_lo) if abs(f_lo) < abs(f_hi) else (hi, f_hi)
    for _ in range(5):
        if f_best == 0.0 or f_lo == f_hi:
            break
        t = hi - f_hi * (hi - lo) / (f_hi - f_lo)
        if not (lo < t < hi):
            break
        f_t = phi(t)
        if f_t > 0.0:
            lo, f_lo = t, f_t
        else:
            hi, f_hi = t, f_t
        if abs(f_t) < abs(f_best):
            best, f_best = t, f_t
    if abs(f_best) > tol_event:
        raise BracketError(f"event residual {abs(f_best):.3e} exceeds tol_event", operation="locate_event")
    return best


def select_event_index(model: ModelSpec, tau, x_minus, p, mask, z_warm,
                       cfg: AlgebraicConfig = DEFAULT_ALGEBRAIC) -> int:
    mask = np.asarray(mask, bool)
    if not np.any(mask):
        raise InternalError("no active guard at the located event", operation="select_event_index")
    z = ChordSolver(model.g_or_empty(), model.dims.n_z, cfg, reuse=False).solve(tau, x_minus, p, z_warm)
    vals = model.guard_values(tau, x_minus, z, p)
    return int(np.argmin(np.where(mask, vals, np.inf)))  # argmin returns the lowest index on ties


def apply_reset(model: ModelSpec, e_star: int, tau, x_minus, z_minus, p,
                cfg: AlgebraicConfig = DEFAULT_ALGEBRAIC):
    x_plus = np.array(model.reset(e_star, tau, x_minus, z_minus, p), dtype=float)
    try:
        z_plus = ChordSolver(model.g_or_empty(), model.dims.n_z, cfg, reuse=False).solve(tau, x_plus, p, z_minus)
    except (AlgebraicConvergenceError, SingularJacobianError) as exc:
        raise ReinitFailure(f"post-event algebraic solve failed: {exc}", operation="apply_reset") from exc
    return x_plus, z_plus


# -- segment integration ---------------------------------------------------


class _Flow:
    """Reduced vector field, optionally augmented with the sensitivity matrix."""

    def __init__(self, model: ModelSpec, p: np.ndarray, cfg: SimConfig, z0: np.ndarray, sens: bool):
        self.model = model
        self.p = p
        self.n_x = model.dims.n_x
        self.sens = sens
        self.Ep = opt_selector(model) if sens else None
        g = model.g_or_empty()
        self.solver = ChordSolver(g, model.dims.n_z, cfg.algebraic, predict=True)
        self.probe = ChordSolver(g, model.dims.n_z, cfg.algebraic, predict=True)
        self.z = np.array(z0, dtype=float)
        self.z_probe = np.array(z0, dtype=float)

    def __call__(self, t, y):
        x = y[: self.n_x]
        z = self.solver.solve(t, x, self.p, self.z)
        self.z = z
        xd = np.asarray(self.model.f(t, x, z, self.p), dtype=float)
        if not self.sens:
            return xd
        S = y[self.n_x :].reshape(self.n_x, -1)
        Sd = sensitivity_rhs(self.model, t, x, z, S, self.p, self.Ep)
        return np.concatenate([xd, Sd.ravel()])

    def z_at(self, t, x):
        self.z_probe = self.probe.solve(t, x, self.p, self.z_probe)
        return self.z_probe

    def guards_at(self, t, y):
        x = y[: self.n_x]
        return self.model.guard_values(t, x, self.z_at(t, x), self.p)


@dataclass
class _Outcome:
    kind: str  # "terminal" or "event"
    t_hit: float
    y_minus: np.ndarray
    z_minus: np.ndarray
    mask: np.ndarray


def _find_crossing(flow: _Flow, dense: DenseStep, t0: float, t1: float, active: np.ndarray, cfg: SimConfig):
    """Scan sub-samples of one accepted step; returns a bracket or None.  Updates ``active`` in place."""
    # guards still masked need interior samples to re-arm before they can fire
    m = cfg.event_samples if active.all() else max(cfg.event_samples, 4)
    prev = t0
    for j in range(1, m + 1):
        s = t1 if j == m else t0 + (t1 - t0) * j / m
        vals = flow.guards_at(s, dense(s))
        if _composite(vals, active, cfg.C_big) <= 0.0:
            return prev, s
        # a guard masked at the segment start re-arms once clearly positive
        active |= vals > cfg.eps_phi
        prev = s
    return None


def _store_segment(flow: _Flow, t0: float, t_end: float, pts: list, denses: list, cfg: SimConfig,
                   mask: np.ndarray) -> SegmentBlock:
    """Merge accepted-step nodes with a uniform eta grid sampled from dense output."""
    n_x = flow.n_x
    span = t_end - t0
    have = np.array([p[0] for p in pts])
    extra = []
    if span > 0:
        grid = t0 + span * np.linspace(0.0, 1.0, cfg.n_nodes_min)[1:-1]
        starts = np.array([d.t0 for d in denses])
        for t in grid:
            j = max(0, int(np.searchsorted(starts, t, side="right")) - 1)
            y = denses[j](t)
            yd = flow(t, y)
            extra.append((t, y, flow.z.copy(), yd))
    allpts = sorted(pts + extra, key=lambda q: q[0])
    eta = np.array([(q[0] - t0) / span if span > 0 else 0.0 for q in allpts])
    keep = [0]
    for i in range(1, len(allpts)):
        if eta[i] > eta[keep[-1]]:
            keep.append(i)
    if len(have) and span == 0:
        keep = [0, len(allpts) - 1]
    allpts = [allpts[i] for i in keep]
    eta = np.array([eta[i] for i in keep])
    eta[0], eta[-1] = 0.0, 1.0
    Y = np.array([q[1] for q in allpts])
    Z = np.array([q[2] for q in allpts]).reshape(len(allpts), -1)
    YD = np.array([q[3] for q in allpts])
    seg = SegmentBlock(t0, t_end, eta, Y[:, :n_x].copy(), Z, YD[:, :n_x].copy(), mask=mask.copy())
    if flow.sens:
        seg.nodes_S = Y[:, n_x:].reshape(len(Y), n_x, -1).copy()
        seg.nodes_Sdot = YD[:, n_x:].reshape(len(Y), n_x, -1).copy()
    return seg


def integrate_segment(model: ModelSpec, t0: float, y0: np.ndarray, z0: np.ndarray, p: np.ndarray, mask,
                      T: float, cfg: SimConfig, sens: bool = False):
    """Integrate from a consistent start until ``T`` or the first active guard crossing.

    ``y0`` is ``x0`` (or ``[x0, vec S0]`` when ``sens``).  Returns
    ``(SegmentBlock, outcome, n_steps)``.
    """
    flow = _Flow(model, p, cfg, z0, sens)
    active = np.array(mask, dtype=bool)
    if t0 >= T:
        raise InvalidArgumentError("segment start must precede T", operation="integrate_segment")
    solver = DOPRI5(flow, t0, y0, T, rtol=cfg.rtol, atol=cfg.atol, h_init=cfg.h_init, h_min=cfg.h_min, h_max=cfg.h_max)
    pts = [(t0, np.array(y0, dtype=float), np.array(z0, dtype=float), flow(t0, np.asarray(y0, float)))]
    flow.z_probe = np.array(z0, dtype=float)
    denses = []
    n_steps = 0
    while True:
        dense = solver.step()
        n_steps += 1
        t1 = solver.t
        z1 = flow.z.copy()
        y1, f1 = solver.y.copy(), solver.f.copy()
        denses.append(dense)
        bracket = _find_crossing(flow, dense, dense.t0, t1, active, cfg) if model.dims.n_e else None
        if bracket is not None:
            act = active.copy()

            def phi(t, _d=dense):
                return _composite(flow.guards_at(t, _d(t)), act, cfg.C_big)

            tau = locate_event(bracket[0], bracket[1], phi, cfg.bisect_iters, cfg.tol_event)
            y_m = dense(tau)
            yd_m = flow(tau, y_m)
            z_m = flow.z.copy()
            pts.append((tau, y_m, z_m, yd_m))
            seg = _store_segment(flow, t0, tau, pts, denses, cfg, np.asarray(mask, bool))
            return seg, _Outcome("event", tau, y_m, z_m, act), n_steps
        pts.append((t1, y1, z1, f1))
        if t1 >= T:
            seg = _store_segment(flow, t0, T, pts, denses, cfg, np.asarray(mask, bool))
            return seg, _Outcome("terminal", T, y1, z1, active), n_steps


# -- full simulation ---------------------------------------------------------


def consistent_initial(model: ModelSpec, p, cfg: AlgebraicConfig = DEFAULT_ALGEBRAIC):
    x0 = np.array(model.x0, dtype=float)
    z0 = ChordSolver(model.g_or_empty(), model.dims.n_z, cfg, reuse=False).solve(0.0, x0, p, model.z0_guess)
    return x0, z0


def simulate(model: ModelSpec, p, T: Optional[float] = None, cfg: Optional[SimConfig] = None,
             sensitivities: bool = False) -> EventSplitTrajectory:
    """Event-split forward simulation on ``[0, T]`` with full parameter vector ``p``.

    With ``sensitivities=True`` the state sensitivity with respect to the
    optimized parameters is integrated alongside and carried through events.
    """
    cfg = cfg or SimConfig()
    T = float(model.T if T is None else T)
    if not T > 0:
        raise InvalidArgumentError("T must be positive", operation="simulate")
    p = np.array(p, dtype=float)
    if p.shape != (model.dims.n_p,):
        raise InvalidArgumentError(f"expected {model.dims.n_p} parameters, got {p.shape}", operation="simulate")
    n_x, k = model.dims.n_x, model.dims.n_opt
    x, z = consistent_initial(model, p, cfg.algebraic)
    S = np.zeros((n_x, k))
    sens_ok = sensitivities
    t = 0.0
    segments, events, warnings = [], [], []
    sens_err = None
    saturated = False
    n_steps = 0
    Ep = opt_selector(model) if sensitivities else None
    for seg_i in range(cfg.K_max):
        mask = active_guard_mask(model, t, x, z, p, cfg.eps_phi)
        y0 = np.concatenate([x, S.ravel()]) if sensitivities else x
        seg, out, ns = integrate_segment(model, t, y0, z, p, mask, T, cfg, sens=sensitivities)
        n_steps += ns
        segments.append(seg)
        if out.kind == "terminal":
            break
        if seg_i == cfg.K_max - 1:
            saturated = True
            break
        tau = out.t_hit
        x_m = out.y_minus[:n_x].copy()
        z_m = out.z_minus
        e = select_event_index(model, tau, x_m, p, out.mask, z_m, cfg.algebraic)
        x_p, z_p = apply_reset(model, e, tau, x_m, z_m, p, cfg.algebraic)
        phidot, _, _ = guard_rate(model, e, tau, x_m, z_m, p)
        if not phidot <= -cfg.tol_transv:
            warnings.append(
                f"grazing event {len(events)} (guard {e}) at tau={tau:.12g}: dphi/dt={phidot:.3e} > -{cfg.tol_transv:g}"
            )
        ev = EventBlock(tau, e, x_m, z_m.copy(), x_p, z_p, phi_dot=phidot)
        if sensitivities:
            S_m = out.y_minus[n_x:].reshape(n_x, k).copy()
            ev.S_minus = S_m
            if sens_ok:
                try:
                    dtau, _ = event_time_sensitivity(model, tau, x_m, z_m, S_m, p, e, cfg.tol_transv, Ep)
                    S = sensitivity_jump(model, tau, dtau, x_m, z_m, S_m, p, e, x_p, z_p, Ep)
                    ev.dtau, ev.S_plus = dtau, S
                except GrazingEventError as exc:
                    sens_ok = False
                    sens_err = str(exc)
            if not sens_ok:
                S = np.zeros((n_x, k))
                ev.dtau = np.full(k, np.nan)
                ev.S_plus = np.full((n_x, k), np.nan)
        events.append(ev)
        t, x, z = tau, x_p, z_p
        if t >= T:
            # event exactly at the horizon: close with a zero-length terminal segment
            segments.append(_terminal_point(model, flow_y=x, z=z, S=S if sensitivities else None, t=T, p=p))
            break
    return EventSplitTrajectory(segments, events, cfg.K_max, saturated, T, p, warnings, sens_err, n_steps)


def _terminal_point(model, flow_y, z, S, t, p) -> SegmentBlock:
    xd = np.asarray(model.f(t, flow_y, z, p), dtype=float)
    seg = SegmentBlock(t, t, np.array([0.0, 1.0]), np.array([flow_y, flow_y]), np.array([z, z]).reshape(2, -1),
                       np.array([xd, xd]))
    if S is not None:
        seg.nodes_S = np.array([S, S])
        seg.nodes_Sdot = np.zeros_like(seg.nodes_S)
    return seg
