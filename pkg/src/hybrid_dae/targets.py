"""Trajectory evaluation at observation times and the mean-squared output loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .algebraic import ChordSolver, algebraic_tangent
from .errors import InvalidArgumentError
from .model import ModelSpec
from .sensitivity import opt_selector
from .simulator import EventSplitTrajectory, SegmentBlock
from .tangent import jvp


@dataclass(frozen=True)
class TargetSet:
    times: np.ndarray
    data: Optional[np.ndarray] = None

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.times, dtype=float)).copy()
        if t.ndim != 1 or len(t) == 0:
            raise InvalidArgumentError("target times must be a non-empty vector")
        if np.any(np.diff(t) < 0):
            raise InvalidArgumentError("target times must be sorted")
        object.__setattr__(self, "times", t)
        if self.data is not None:
            d = np.asarray(self.data, dtype=float)
            d = d.reshape(len(t), -1) if d.ndim == 1 else d
            if d.shape[0] != len(t):
                raise InvalidArgumentError("data row count must equal the number of target times")
            object.__setattr__(self, "data", d.copy())

    @property
    def N(self) -> int:
        return len(self.times)

    def with_data(self, data) -> "TargetSet":
        return TargetSet(self.times, data)


@dataclass(frozen=True)
class BlendConfig:
    mode: str = "hard"
    beta: float = 150.0
    eps_omega: float = 1e-12

    def __post_init__(self):
        if self.mode not in ("hard", "soft"):
            raise InvalidArgumentError(f"unknown blend mode {self.mode!r}")
        if not (self.beta > 0 and self.eps_omega > 0):
            raise InvalidArgumentError("beta and eps_omega must be positive")


HARD = BlendConfig("hard")


# -- interpolation -----------------------------------------------------------


def _locate(times: np.ndarray, t: float) -> int:
    j = int(np.searchsorted(times, t, side="right")) - 1
    return min(max(j, 0), len(times) - 2)


def hermite(times, Y, Yd, t):
    """Cubic Hermite interpolant of nodes ``Y`` with slopes ``Yd`` (leading axis = nodes)."""
    j = _locate(times, t)
    t0, t1 = times[j], times[j + 1]
    h = t1 - t0
    if h <= 0:
        return Y[j + 1] if t >= t1 else Y[j]
    s = (t - t0) / h
    s2, s3 = s * s, s * s * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    return h00 * Y[j] + h10 * h * Yd[j] + h01 * Y[j + 1] + h11 * h * Yd[j + 1]


def segment_state(seg: SegmentBlock, t: float) -> np.ndarray:
    return hermite(seg.times, seg.nodes_x, seg.nodes_xdot, t)


def segment_sensitivity(seg: SegmentBlock, t: float) -> np.ndarray:
    return hermite(seg.times, seg.nodes_S, seg.nodes_Sdot, t)


def _nearest_z(seg: SegmentBlock, t: float) -> np.ndarray:
    return seg.nodes_z[int(np.argmin(np.abs(seg.times - t)))]


def _boundary_dtaus(traj: EventSplitTrajectory, n_opt: int):
    """Per real segment, (da, db): derivatives of its start and end times."""
    K = len(traj.segments)
    zero = np.zeros(n_opt)
    out = []
    for k in range(K):
        da = traj.events[k - 1].dtau if k > 0 else zero
        db = traj.events[k].dtau if k < len(traj.events) else zero
        out.append((zero if da is None else da, zero if db is None else db))
    return out


def segment_states_at_targets(traj: EventSplitTrajectory, targets: TargetSet, with_sens: bool = False):
    """Candidate matrix ``X[k, i] = x_k(clip(t_i, a_k, b_k))`` over real segments.

    With ``with_sens`` also returns ``dX[k, i] = dX/dp_opt`` including the
    motion of a clip boundary (``xdot * dtau``).
    """
    K = len(traj.segments)
    n_x = traj.segments[0].nodes_x.shape[1]
    N = targets.N
    X = np.zeros((K, N, n_x))
    dX = None
    if with_sens:
        n_opt = traj.segments[0].nodes_S.shape[2]
        dX = np.zeros((K, N, n_x, n_opt))
        bd = _boundary_dtaus(traj, n_opt)
    for k, seg in enumerate(traj.segments):
        a, b = seg.t_start, seg.t_end
        for i, t in enumerate(targets.times):
            tc = min(max(t, a), b)
            X[k, i] = segment_state(seg, tc)
            if with_sens:
                dX[k, i] = segment_sensitivity(seg, tc)
                if t < a:
                    dX[k, i] += np.outer(seg.nodes_xdot[0], bd[k][0])
                elif t > b:
                    dX[k, i] += np.outer(seg.nodes_xdot[-1], bd[k][1])
    return X, dX


def select_hard(traj: EventSplitTrajectory, t: float) -> int:
    """Latest real segment whose closed interval contains ``t`` (right-continuous)."""
    tol = 1e-12 * max(1.0, traj.T)
    if not (-tol <= t <= traj.T + tol):
        raise InvalidArgumentError(f"target time {t} outside [0, {traj.T}]", operation="select_hard")
    for k in range(len(traj.segments) - 1, -1, -1):
        seg = traj.segments[k]
        if seg.t_start <= t <= seg.t_end:
            return k
    return 0 if t < traj.segments[0].t_start else len(traj.segments) - 1


def blend_weights(traj: EventSplitTrajectory, t: float, cfg: BlendConfig):
    """Raw weights ``omega_k`` and the two sigmoids per real segment."""
    a = np.array([s.t_start for s in traj.segments])
    b = np.array([s.t_end for s in traj.segments])
    sa = expit(cfg.beta * (t - a))
    sb = expit(cfg.beta * (b - t))
    return sa * sb, sa, sb


def blend_soft(traj: EventSplitTrajectory, X: np.ndarray, i: int, t: float, cfg: BlendConfig):
    """Normalized blend of candidate states ``X[:, i]`` at time ``t``."""
    w, _, _ = blend_weights(traj, t, cfg)
    wbar = w / (w.sum() + cfg.eps_omega)
    return wbar @ X[:, i]


def reconstruct_output(model: ModelSpec, t, x_hat, p, z_warm, alg_cfg=None):
    """``(z_hat, y_hat)`` with ``z_hat`` solved at the reconstructed state."""
    args = () if alg_cfg is None else (alg_cfg,)
    z = ChordSolver(model.g_or_empty(), model.dims.n_z, *args, reuse=False).solve(t, x_hat, p, z_warm)
    y = np.asarray(model.output(t, x_hat, z, p), dtype=float)
    return z, y


def loss(predictions, data, saturated: bool = False) -> float:
    """Mean over observations of the squared Euclidean output mismatch."""
    if saturated:
        return float("inf")
    P = np.asarray(predictions, dtype=float)
    D = np.asarray(data, dtype=float)
    if P.shape != D.shape:
        raise InvalidArgumentError(f"prediction shape {P.shape} does not match data shape {D.shape}", operation="loss")
    P = P.reshape(len(P), -1)
    D = D.reshape(len(D), -1)
    return float(np.mean(np.sum((P - D) ** 2, axis=1)))


# -- combined evaluation -------------------------------------------------------


@dataclass
class Predictions:
    y: np.ndarray  # (N, n_y)
    x_hat: np.ndarray  # (N, n_x)
    z_hat: np.ndarray  # (N, n_z)
    dy: Optional[np.ndarray] = None  # (N, n_y, n_opt)


def predict(model: ModelSpec, traj: EventSplitTrajectory, targets: TargetSet, blend: BlendConfig = HARD,
            with_sens: bool = False) -> Predictions:
    """Reconstruct outputs at every target time, optionally with d y_hat / d p_opt."""
    if traj.saturated:
        raise InvalidArgumentError("cannot evaluate targets on a saturated trajectory", operation="predict")
    p = traj.p
    if blend.mode == "soft":
        X, dX = segment_states_at_targets(traj, targets, with_sens)
    N = targets.N
    n_x, n_z, n_y = model.dims.n_x, model.dims.n_z, model.dims.n_y
    Ep = opt_selector(model) if with_sens else None
    Y = np.zeros((N, n_y))
    XH = np.zeros((N, n_x))
    ZH = np.zeros((N, n_z))
    dY = np.zeros((N, n_y, model.dims.n_opt)) if with_sens else None
    if with_sens and blend.mode == "soft":
        bd = _boundary_dtaus(traj, model.dims.n_opt)
    for i, t in enumerate(targets.times):
        if blend.mode == "hard":
            # the selected segment contains t, so no clipping is involved
            k = select_hard(traj, t)
            seg = traj.segments[k]
            tc = min(max(t, seg.t_start), seg.t_end)
            xh = segment_state(seg, tc)
            dxh = segment_sensitivity(seg, tc) if with_sens else None
        else:
            w, sa, sb = blend_weights(traj, t, blend)
            denom = w.sum() + blend.eps_omega
            wbar = w / denom
            xh = wbar @ X[:, i]
            k = int(np.argmax(w))
            if with_sens:
                dxh = np.einsum("k,kjq->jq", wbar, dX[:, i])
                for kk in range(len(w)):
                    da, db = bd[kk]
                    dw = w[kk] * blend.beta * (-(1.0 - sa[kk]) * da + (1.0 - sb[kk]) * db)
                    dxh += np.outer(X[kk, i] - xh, dw) / denom
        z, y = reconstruct_output(model, t, xh, p, _nearest_z(traj.segments[k], t))
        Y[i], XH[i], ZH[i] = y, xh, z
        if with_sens:
            dz = algebraic_tangent(model.g_or_empty(), t, xh, p, z, np.zeros(Ep.shape[1]), dxh, Ep)
            dY[i] = jvp(model.output, t, xh, z, p, np.zeros(Ep.shape[1]), dxh, dz, Ep).tangents.reshape(n_y, -1)
    return Predictions(Y, XH, ZH, dY)


def loss_and_gradient(pred: Predictions, data) -> tuple[float, Optional[np.ndarray]]:
    D = np.asarray(data, dtype=float).reshape(pred.y.shape)
    r = pred.y - D
    J = float(np.mean(np.sum(r * r, axis=1)))
    if pred.dy is None:
        return J, None
    grad = (2.0 / len(r)) * np.einsum("ij,ijq->q", r, pred.dy)
    return J, grad
