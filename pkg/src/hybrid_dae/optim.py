"""Adam identification driver, finite-difference oracle, and gradient-route comparison."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .adjoint import gradient_adjoint
from .errors import GrazingEventError, InvalidArgumentError, NumericalFailure, OracleFailure, SetupError
from .forward import gradient_forward
from .model import ModelSpec
from .simulator import SimConfig, simulate
from .targets import HARD, BlendConfig, TargetSet, loss_and_gradient, predict


# -- Adam --------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, lr: float = 1e-2, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, **kw)


def adam_step(state: AdamState, grad) -> tuple[AdamState, np.ndarray]:
    """Bias-corrected Adam update; returns the new state and the parameter increment."""
    g = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(g)):
        raise InvalidArgumentError("non-finite gradient passed to adam_step", operation="adam_step")
    k = state.step_count + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1**k)
    v_hat = v / (1 - state.beta2**k)
    delta = -state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, step_count=k), delta


# -- finite differences ----------------------------------------------------------------


@dataclass
class FDGradient:
    grad: np.ndarray
    flagged: np.ndarray  # event count differs between probes (or from the base point)
    counts: list  # per component (minus, plus) event counts, None when unknown


def fd_gradient(loss_fn: Callable, p_opt, eps_rel: float = 1e-6, base_count: Optional[int] = None) -> FDGradient:
    """Central differences with step ``eps_rel * max(1, |p_i|)``.

    ``loss_fn(p)`` returns a loss or ``(loss, event_count)``; components whose
    probes see different event counts are flagged.
    """
    p = np.atleast_1d(np.asarray(p_opt, dtype=float))
    n = len(p)
    grad = np.zeros(n)
    flagged = np.zeros(n, dtype=bool)
    counts = []

    def call(q):
        out = loss_fn(q)
        return (float(out[0]), out[1]) if isinstance(out, tuple) else (float(out), None)

    for i in range(n):
        h = eps_rel * max(1.0, abs(p[i]))
        dp = np.zeros(n)
        dp[i] = h
        lp, cp = call(p + dp)
        lm, cm = call(p - dp)
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise OracleFailure(f"non-finite probe loss for component {i}", operation="fd_gradient", block=i)
        grad[i] = (lp - lm) / (2 * h)
        counts.append((cm, cp))
        if cp is not None and (cp != cm or (base_count is not None and cp != base_count)):
            flagged[i] = True
    return FDGradient(grad, flagged, counts)


def model_loss_fn(model: ModelSpec, targets: TargetSet, cfg: SimConfig, blend: BlendConfig = HARD,
                  T: Optional[float] = None):
    """``p_opt -> (loss, event_count)`` on the explicit RK trajectory."""

    def fn(p_opt):
        traj = simulate(model, model.full_params(p_opt), T, cfg)
        if traj.saturated:
            return float("inf"), traj.n_events
        J, _ = loss_and_gradient(predict(model, traj, targets, blend), targets.data)
        return J, traj.n_events

    return fn


def log_uniform_bias(p_true, half_width: float, seed: int) -> np.ndarray:
    """``p_true * exp(u)`` with ``u ~ U(-w, w)`` drawn from a seeded generator."""
    p = np.asarray(p_true, dtype=float)
    if np.any(p <= 0):
        raise InvalidArgumentError("log-uniform bias needs positive parameters", operation="log_uniform_bias")
    if half_width < 0:
        raise InvalidArgumentError("half_width must be non-negative", operation="log_uniform_bias")
    u = np.random.default_rng(seed).uniform(-half_width, half_width, size=p.shape)
    return p * np.exp(u)


# -- identification ----------------------------------------------------------------


@dataclass(frozen=True)
class IdentifyConfig:
    method: str = "fwd"
    iters: int = 500
    lr: float = 1e-2
    beta: float = 150.0
    eps_omega: float = 1e-12
    grad_tol: float = 0.0
    n_nodes: int = 33
    rtol: float = 1e-8
    atol: float = 1e-8
    K_max: int = 64
    event_samples: int = 1
    blend_mode: str = "soft"

    def __post_init__(self):
        if self.blend_mode not in ("hard", "soft"):
            raise InvalidArgumentError(f"unknown blend mode {self.blend_mode!r}")
        if self.method not in ("fwd", "adjoint"):
            raise InvalidArgumentError(f"unknown gradient method {self.method!r}")
        if self.iters < 0 or self.lr <= 0 or self.beta <= 0 or self.grad_tol < 0 or self.n_nodes < 2:
            raise InvalidArgumentError("invalid identification settings")

    def sim_config(self) -> SimConfig:
        return SimConfig(K_max=self.K_max, rtol=self.rtol, atol=self.atol, event_samples=self.event_samples)

    def blend(self) -> BlendConfig:
        return BlendConfig(self.blend_mode, self.beta, self.eps_omega)


@dataclass
class Iterate:
    iter: int
    p_opt: list
    train_loss: float
    eval_loss: float
    grad_norm: float
    wall_ms: float


@dataclass
class IdentificationRun:
    config: dict
    p_init: list
    iterates: list
    best: dict
    stop_reason: str
    message: str = ""

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "p_init": self.p_init,
            "iterates": [asdict(it) for it in self.iterates],
            "best": self.best,
            "stop_reason": self.stop_reason,
            "message": self.message,
        }


def evaluate_point(model: ModelSpec, p_opt, targets: TargetSet, cfg: IdentifyConfig):
    """``(train_loss, grad, eval_loss)``: blended training objective on the chosen route,
    unblended loss on the explicit RK trajectory."""
    sim = cfg.sim_config()
    blend = cfg.blend()
    if cfg.method == "fwd":
        J, grad, traj = gradient_forward(model, p_opt, targets, sim, blend, return_traj=True)
    else:
        traj = simulate(model, model.full_params(p_opt), None, sim)
        J, grad, _ = gradient_adjoint(model, traj, targets, blend, cfg.n_nodes)
    if traj.saturated:
        return float("inf"), grad, float("inf")
    ev, _ = loss_and_gradient(predict(model, traj, targets, HARD), targets.data)
    return J, grad, ev


def run_identify(model: ModelSpec, targets: TargetSet, p_init, cfg: IdentifyConfig = IdentifyConfig(),
                 callback: Optional[Callable[[Iterate], None]] = None) -> IdentificationRun:
    """Adam on the chosen gradient route, logging training and evaluation losses."""
    if targets.data is None:
        raise InvalidArgumentError("identification needs target data", operation="run_identify")
    p = np.array(p_init, dtype=float)
    # positivity floor for positive starting components; others are unconstrained
    floor = np.where(p > 0, 1e-8 * p, -np.inf)
    state = AdamState.zeros(len(p), cfg.lr)
    iterates = []
    best = None
    stop, message = "budget", ""
    for it in range(cfg.iters + 1):
        t0 = time.perf_counter()
        try:
            J, grad, ev = evaluate_point(model, p, targets, cfg)
        except GrazingEventError as exc:
            J, grad, ev = exc.loss, np.full(len(p), np.nan), float("nan")
            message = exc.describe()
        except NumericalFailure as exc:
            if it == 0:
                raise SetupError(f"initial point cannot be evaluated: {exc}", operation="run_identify") from exc
            J, grad, ev = float("nan"), np.full(len(p), np.nan), float("nan")
            message = exc.describe()
        if it == 0 and not np.isfinite(J):
            raise SetupError("trajectory saturates at the initial point", operation="run_identify")
        gnorm = float(np.max(np.abs(grad))) if len(grad) else 0.0
        rec = Iterate(it, [float(v) for v in p], float(J), float(ev), gnorm, 1e3 * (time.perf_counter() - t0))
        iterates.append(rec)
        if callback:
            callback(rec)
        if np.isfinite(ev) and (best is None or ev < best["eval_loss"]):
            best = {"iter": it, "p_opt": list(rec.p_opt), "eval_loss": float(ev)}
        if not (np.isfinite(J) and np.all(np.isfinite(grad))):
            stop = "nonfinite"
            break
        if it == cfg.iters:
            break
        if gnorm < cfg.grad_tol:
            stop = "grad_tol"
            break
        state, delta = adam_step(state, grad)
        p = np.maximum(p + delta, floor)
    if best is None:
        best = {"iter": 0, "p_opt": [float(v) for v in p_init], "eval_loss": float("nan")}
    return IdentificationRun(asdict(cfg), [float(v) for v in p_init], iterates, best, stop, message)


# -- method comparison ------------------------------------------------------------------


@dataclass
class CompareTable:
    names: list
    fwd: np.ndarray
    adjoint: np.ndarray
    fd: np.ndarray
    flagged: np.ndarray
    loss: float
    n_events: int
    saturated: bool = False
    notes: list = field(default_factory=list)

    @staticmethod
    def _rel(a, b):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.abs(a - b) / np.abs(b)

    @staticmethod
    def _nrel(a, b):
        nb = np.linalg.norm(b)
        return float(np.linalg.norm(a - b) / nb) if nb > 0 else float(np.linalg.norm(a - b))

    def rows(self) -> list:
        out = []
        rf, ra, rfa = self._rel(self.fwd, self.fd), self._rel(self.adjoint, self.fd), self._rel(self.adjoint, self.fwd)
        for i, n in enumerate(self.names):
            out.append({
                "param": n,
                "fwd": float(self.fwd[i]),
                "adjoint": float(self.adjoint[i]),
                "fd": float(self.fd[i]),
                "rel_fwd_fd": float(rf[i]),
                "rel_adjoint_fd": float(ra[i]),
                "rel_adjoint_fwd": float(rfa[i]),
                "event_count_flag": bool(self.flagged[i]),
            })
        return out

    def summary(self) -> dict:
        return {
            "norm_rel_fwd_fd": self._nrel(self.fwd, self.fd),
            "norm_rel_adjoint_fd": self._nrel(self.adjoint, self.fd),
            "norm_rel_adjoint_fwd": self._nrel(self.adjoint, self.fwd),
        }

    def to_json(self) -> dict:
        return {"loss": self.loss, "n_events": self.n_events, "saturated": self.saturated,
                "rows": self.rows(), "summary": self.summary() if not self.saturated else {}, "notes": self.notes}


def compare_methods(model: ModelSpec, p_opt, targets: TargetSet, cfg: Optional[SimConfig] = None,
                    blend: BlendConfig = HARD, n_nodes: int = 33, eps_rel: float = 1e-6) -> CompareTable:
    """Forward, adjoint and finite-difference gradients side by side."""
    cfg = cfg or SimConfig()
    p_opt = np.atleast_1d(np.asarray(p_opt, dtype=float))
    names = list(model.param_names[i] if i < len(model.param_names) else f"p{i}" for i in model.layout.opt_indices)
    n = len(p_opt)
    nan = np.full(n, np.nan)
    traj = simulate(model, model.full_params(p_opt), None, cfg)
    if traj.saturated:
        return CompareTable(names, nan, nan, nan, np.zeros(n, bool), float("inf"), traj.n_events, True,
                            ["trajectory saturated"])
    notes = []
    try:
        J, g_fwd = gradient_forward(model, p_opt, targets, cfg, blend)
    except GrazingEventError as exc:
        J, g_fwd = exc.loss, nan
        notes.append(exc.describe())
    try:
        _, g_adj, rep = gradient_adjoint(model, traj, targets, blend, n_nodes)
        notes += rep.warnings
    except NumericalFailure as exc:
        g_adj = nan
        notes.append(exc.describe())
    try:
        fd = fd_gradient(model_loss_fn(model, targets, cfg, blend), p_opt, eps_rel, base_count=traj.n_events)
        g_fd, flags = fd.grad, fd.flagged
    except NumericalFailure as exc:
        g_fd, flags = nan, np.zeros(n, bool)
        notes.append(exc.describe())
    return CompareTable(names, np.asarray(g_fwd, float), np.asarray(g_adj, float), g_fd, flags, float(J),
                        traj.n_events, False, notes)
