"""Dormand–Prince 5(4) stepping with the standard 4th-order continuous extension."""

from __future__ import annotations

import numpy as np

from .errors import StiffnessError

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
P = np.array(
    [
        [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


class DenseStep:
    """Continuous extension of one accepted step on ``[t0, t0 + h]``."""

    __slots__ = ("t0", "h", "y0", "Q")

    def __init__(self, t0: float, h: float, y0: np.ndarray, K: np.ndarray):
        self.t0 = t0
        self.h = h
        self.y0 = y0
        self.Q = K.T @ P

    def __call__(self, t: float) -> np.ndarray:
        th = (t - self.t0) / self.h
        return self.y0 + self.h * (self.Q @ np.array([th, th * th, th**3, th**4]))


def initial_step(rhs, t0, y0, f0, direction_span, rtol, atol) -> float:
    """Starting step by the usual two-probe estimate (Hairer, Norsett & Wanner)."""
    scale = atol + np.abs(y0) * rtol
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, direction_span)
    y1 = y0 + h0 * f0
    f1 = rhs(t0 + h0, y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, direction_span)


class DOPRI5:
    """Adaptive stepper.  ``rhs(t, y)`` may keep internal warm-start state."""

    def __init__(self, rhs, t0: float, y0: np.ndarray, t_bound: float, *, rtol: float, atol: float,
                 h_init: float | None = None, h_min: float = 1e-14, h_max: float = np.inf):
        self.rhs = rhs
        self.t = float(t0)
        self.y = np.array(y0, dtype=float)
        self.t_bound = float(t_bound)
        self.rtol = rtol
        self.atol = atol
        self.h_min = h_min
        self.h_max = h_max
        self.f = rhs(self.t, self.y)
        span = self.t_bound - self.t
        if h_init is None:
            h_init = initial_step(rhs, self.t, self.y, self.f, span, rtol, atol)
            self.f = rhs(self.t, self.y)  # restore warm-start state at t0
        self.h = min(h_init, h_max, span)
        self.K = np.empty((7, len(self.y)))

    def step(self) -> DenseStep:
        """Advance one accepted step; returns its dense output."""
        t, y, f = self.t, self.y, self.f
        h = self.h
        K = self.K
        while True:
            remaining = self.t_bound - t
            if h >= remaining or remaining - h < 1e-12 * max(1.0, abs(self.t_bound)):
                h = remaining
                t_new = self.t_bound
            else:
                t_new = t + h
            if h < self.h_min and t_new != self.t_bound:
                raise StiffnessError(f"step size {h:.3e} below h_min at t={t:.6g}", operation="integrate_segment")
            K[0] = f
            for s in range(1, 6):
                dy = K[:s].T @ A[s] * h
                K[s] = self.rhs(t + C[s] * h, y + dy)
            y_new = y + h * (K[:6].T @ B)
            f_new = self.rhs(t_new, y_new)
            K[6] = f_new
            err = h * (K.T @ E)
            scale = self.atol + np.maximum(np.abs(y), np.abs(y_new)) * self.rtol
            en = np.sqrt(np.mean((err / scale) ** 2)) if len(y) else 0.0
            if not np.isfinite(en):
                en = np.inf
            if en <= 1.0:
                fac = MAX_FACTOR if en == 0 else min(MAX_FACTOR, SAFETY * en ** (-0.2))
                dense = DenseStep(t, h, y.copy(), K.copy())
                self.t, self.y, self.f = t_new, y_new, f_new
                self.h = min(h * fac, self.h_max)
                return dense
            h = h * max(MIN_FACTOR, SAFETY * en ** (-0.2))
            if h < self.h_min:
                raise StiffnessError(f"step size {h:.3e} below h_min at t={t:.6g}", operation="integrate_segment")
            # restore warm-start state after a rejected step
            self.rhs(t, y)
