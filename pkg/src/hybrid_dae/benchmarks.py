"""Built-in models: Cauer ladder with a threshold reinit, planar bouncing balls, and small test systems."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from . import tangent as tg
from .errors import InvalidArgumentError, SetupError
from .model import Dims, ModelSpec, ParameterLayout
from .simulator import SimConfig, simulate
from .targets import HARD, TargetSet, predict

# -- Cauer ladder ----------------------------------------------------------------

CAUER_TRUTH = np.array([1.5, 1.2, 0.9, 1.35, 1.8, 2.25, 1.65])
CAUER_NAMES = ("C1", "C2", "C3", "C4", "C5", "L1", "L2")


@dataclass(frozen=True)
class CauerParams:
    C1: float = CAUER_TRUTH[0]
    C2: float = CAUER_TRUTH[1]
    C3: float = CAUER_TRUTH[2]
    C4: float = CAUER_TRUTH[3]
    C5: float = CAUER_TRUTH[4]
    L1: float = CAUER_TRUTH[5]
    L2: float = CAUER_TRUTH[6]

    def __post_init__(self):
        if min(self.as_array()) <= 0:
            raise InvalidArgumentError("Cauer parameters must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.C1, self.C2, self.C3, self.C4, self.C5, self.L1, self.L2])


def make_cauer(params: Optional[CauerParams] = None, *, R_s: float = 1.0, R_23: float = 1.0, R_45: float = 3.0,
               R_L: float = 1.0, V_in: float = 1.0, threshold: float = 0.5, T: float = 20.0) -> ModelSpec:
    """Doubly terminated 7th-order ladder driven by a unit step.

    Node chain: source -R_s- n1 [C1] -L1- n2 [C2] -R_23- n3 [C3] -L2- n4 [C4]
    -R_45- n5 [C5] -R_L- ground.  Differential states are the five capacitor
    voltages and two inductor currents; the algebraic variables are the five
    capacitor currents fixed by the node current balances.  The coupling
    resistors keep the settled C3 voltage (2/3 V) above the threshold so the
    reinit repeats with transversal crossings.  The run starts from the DC
    operating point with C3 just discharged, so every segment is a C3
    recharge and no long start-up transient precedes the first event.
    """
    params = params or CauerParams()
    # node current balances: z = M x + b
    M = np.zeros((5, 7))
    M[0, 0], M[0, 5] = -1.0 / R_s, -1.0
    M[1, 5], M[1, 1], M[1, 2] = 1.0, -1.0 / R_23, 1.0 / R_23
    M[2, 1], M[2, 2], M[2, 6] = 1.0 / R_23, -1.0 / R_23, -1.0
    M[3, 6], M[3, 3], M[3, 4] = 1.0, -1.0 / R_45, 1.0 / R_45
    M[4, 3], M[4, 4] = 1.0 / R_45, -1.0 / R_45 - 1.0 / R_L
    b = np.array([V_in / R_s, 0.0, 0.0, 0.0, 0.0])
    # DC operating point (inductors shorted, capacitors open), then vC3 = 0
    i_dc = V_in / (R_s + R_23 + R_45 + R_L)
    v1 = V_in - i_dc * R_s
    v3 = v1 - i_dc * R_23
    x0 = np.array([v1, v1, 0.0, v3, i_dc * R_L, i_dc, i_dc])
    D = np.zeros((2, 7))  # inductor voltages
    D[0, 0], D[0, 1], D[1, 2], D[1, 3] = 1.0, -1.0, 1.0, -1.0

    def f(t, x, z, p):
        return tg.concatenate([z / p[:5], (D @ x) / p[5:]])

    def g(t, x, z, p):
        return z - (M @ x + b)

    def h(t, x, z, p):
        return tg.stack([x[4], x[2]])

    def guards(t, x, z, p):
        return tg.stack([threshold - x[2]])

    def reset(e, t, x, z, p):
        return tg.stack([x[k] if k != 2 else 0.0 * x[k] for k in range(7)])

    return ModelSpec(
        name="cauer",
        dims=Dims(7, 5, 7, 7, 1, 2),
        f=f,
        g=g,
        layout=ParameterLayout(params.as_array(), tuple(range(7))),
        x0=x0,
        z0_guess=np.zeros(5),
        h=h,
        guards=guards,
        reset=reset,
        reset_indices=((2,),),
        T=T,
        state_names=("vC1", "vC2", "vC3", "vC4", "vC5", "iL1", "iL2"),
        param_names=CAUER_NAMES,
    )


# -- bouncing balls ------------------------------------------------------------------

BALLS_TRUTH = np.array([9.81, 0.85, 0.95])
BALLS_NAMES = ("g_c", "e_g", "e_b")


@dataclass(frozen=True)
class BallsParams:
    g_c: float = 9.81
    e_g: float = 0.85
    e_b: float = 0.95

    def __post_init__(self):
        if not (self.g_c > 0 and 0 < self.e_g <= 1 and 0 < self.e_b <= 1):
            raise InvalidArgumentError("need g_c > 0 and restitutions in (0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.g_c, self.e_g, self.e_b])


def initial_balls(N: int, radius: float = 0.5, box_half_width: float = 10.0, seed: int = 0) -> np.ndarray:
    """Seeded layout: balls spread across the box width, jittered, dropped from near the ceiling.

    Heights and vertical speeds are drawn so that a single ball bounces exactly
    once before t = 3 (second impact after 3.3 s at the truth parameters).
    """
    rng = np.random.default_rng(seed)
    x0 = np.zeros(4 * N)
    span = box_half_width - radius
    for i in range(N):
        x0[4 * i] = -span + 2 * span * (i + 0.5) / N + rng.uniform(-0.5, 0.5) * min(1.0, span / N)
        x0[4 * i + 1] = rng.uniform(0.85, 0.95) * span
        x0[4 * i + 2] = rng.uniform(-1.0, 1.0) * (1.0 if N == 1 else 2.5)
        x0[4 * i + 3] = rng.uniform(-0.5, 0.5)
    return x0


def ball_guard_count(N: int) -> int:
    return 4 * N + N * (N - 1) // 2


def make_bouncing_balls(N: int = 3, params: Optional[BallsParams] = None, radius: float = 0.5,
                        box_half_width: float = 10.0, *, seed: int = 0, T: float = 4.0,
                        x0: Optional[np.ndarray] = None) -> ModelSpec:
    """``N`` equal balls in a square box.

    Guards per ball ``i`` (indices ``4i .. 4i+3``): right wall, left wall,
    ceiling, ground; then one guard per pair in lexicographic order.
    """
    if N < 1:
        raise InvalidArgumentError("need at least one ball")
    params = params or BallsParams()
    r, W = float(radius), float(box_half_width)
    lim = W - r
    x0 = initial_balls(N, r, W, seed) if x0 is None else np.asarray(x0, dtype=float)
    if x0.shape != (4 * N,):
        raise InvalidArgumentError("x0 must have 4N entries")
    q = x0.reshape(N, 4)[:, :2]
    for i, j in combinations(range(N), 2):
        if np.linalg.norm(q[i] - q[j]) <= 2 * r:
            raise SetupError(f"balls {i} and {j} overlap initially")
    if np.any(np.abs(q[:, 0]) >= lim) or np.any(q[:, 1] <= r) or np.any(q[:, 1] >= lim):
        raise SetupError("initial ball outside the box")
    pairs = list(combinations(range(N), 2))

    def f(t, x, z, p):
        comps = []
        for i in range(N):
            comps += [x[4 * i + 2], x[4 * i + 3], 0.0 * x[4 * i + 2], -p[0] + 0.0 * x[4 * i + 3]]
        return tg.stack(comps)

    def guards(t, x, z, p):
        qx, qy = x[0::4], x[1::4]
        parts = [tg.stack([lim - qx[i], qx[i] + lim, lim - qy[i], qy[i] - r]) for i in range(N)]
        if pairs:
            d = [tg.sqrt((qx[i] - qx[j]) ** 2 + (qy[i] - qy[j]) ** 2) - 2 * r for i, j in pairs]
            parts.append(tg.stack(d))
        return tg.concatenate(parts)

    def reset(e, t, x, z, p):
        c = [x[k] for k in range(4 * N)]
        if e < 4 * N:
            i, kind = divmod(e, 4)
            if kind < 2:
                c[4 * i + 2] = -p[2] * c[4 * i + 2]
            elif kind == 2:
                c[4 * i + 3] = -p[2] * c[4 * i + 3]
            else:
                c[4 * i + 3] = -p[1] * c[4 * i + 3]
        else:
            i, j = pairs[e - 4 * N]
            dx, dy = c[4 * i] - c[4 * j], c[4 * i + 1] - c[4 * j + 1]
            inv = 1.0 / tg.sqrt(dx * dx + dy * dy)
            nx, ny = dx * inv, dy * inv
            vn = (c[4 * i + 2] - c[4 * j + 2]) * nx + (c[4 * i + 3] - c[4 * j + 3]) * ny
            c[4 * i + 2], c[4 * i + 3] = c[4 * i + 2] - vn * nx, c[4 * i + 3] - vn * ny
            c[4 * j + 2], c[4 * j + 3] = c[4 * j + 2] + vn * nx, c[4 * j + 3] + vn * ny
        return tg.stack(c)

    reset_idx = []
    for i in range(N):
        reset_idx += [(4 * i + 2,), (4 * i + 2,), (4 * i + 3,), (4 * i + 3,)]
    reset_idx += [(4 * i + 2, 4 * i + 3, 4 * j + 2, 4 * j + 3) for i, j in pairs]
    names = tuple(f"{s}{i}" for i in range(N) for s in ("qx", "qy", "vx", "vy"))
    return ModelSpec(
        name="balls",
        dims=Dims(4 * N, 0, 3, 3, ball_guard_count(N), 4 * N),
        f=f,
        g=None,
        layout=ParameterLayout(params.as_array(), (0, 1, 2)),
        x0=x0,
        z0_guess=np.zeros(0),
        guards=guards,
        reset=reset,
        reset_indices=tuple(reset_idx),
        T=T,
        state_names=names,
        param_names=BALLS_NAMES,
    )


def mechanical_energy(model: ModelSpec, x: np.ndarray, g_c: float) -> float:
    X = np.asarray(x).reshape(-1, 4)
    return float(0.5 * np.sum(X[:, 2:] ** 2) + g_c * np.sum(X[:, 1]))


# -- small test systems ----------------------------------------------------------------


def make_bounce_1d(height: float = 10.0, g_c: float = 9.81, e_g: float = 0.8, T: float = 3.0) -> ModelSpec:
    """Point mass over a floor at y = 0; ``x = (y, v)``, ``p = (g_c, e_g)``."""

    def f(t, x, z, p):
        return tg.stack([x[1], -p[0] + 0.0 * x[1]])

    return ModelSpec(
        name="bounce1d",
        dims=Dims(2, 0, 2, 2, 1, 2),
        f=f,
        g=None,
        layout=ParameterLayout(np.array([g_c, e_g]), (0, 1)),
        x0=np.array([height, 0.0]),
        z0_guess=np.zeros(0),
        guards=lambda t, x, z, p: tg.stack([x[0]]),
        reset=lambda e, t, x, z, p: tg.stack([x[0], -p[1] * x[1]]),
        reset_indices=((1,),),
        T=T,
        state_names=("y", "v"),
        param_names=("g_c", "e_g"),
    )


def make_decay(p: float = 3.0, x0: float = 1.0, T: float = 1.0) -> ModelSpec:
    """``xdot = -p x``, no events; the quadratic sanity model."""
    return ModelSpec(
        name="decay",
        dims=Dims(1, 0, 1, 1, 0, 1),
        f=lambda t, x, z, q: -q[0] * x,
        g=None,
        layout=ParameterLayout(np.array([p]), (0,)),
        x0=np.array([x0]),
        z0_guess=np.zeros(0),
        T=T,
        param_names=("p",),
    )


def make_ramp(p=(0.7, -0.4, 1.5), T: float = 2.0) -> ModelSpec:
    """Guard-free linear system: ``xdot = (p0, p1)``, ``z = p2 x0``, output ``(x, z)``.

    States are affine in time, so trapezoidal steps and linear interpolation
    are exact and every gradient route must agree to round-off.
    """

    def f(t, x, z, q):
        return tg.stack([q[0] + 0.0 * x[0], q[1] + 0.0 * x[1]])

    return ModelSpec(
        name="ramp",
        dims=Dims(2, 1, 3, 3, 0, 3),
        f=f,
        g=lambda t, x, z, q: z - q[2] * x[:1],
        layout=ParameterLayout(np.array(p, dtype=float), (0, 1, 2)),
        x0=np.array([1.0, 0.5]),
        z0_guess=np.zeros(1),
        h=lambda t, x, z, q: tg.concatenate([x, z]),
        T=T,
        param_names=("a", "b", "c"),
    )


def make_grazing(T: float = 2.0) -> ModelSpec:
    """``xdot = 1`` with guard ``(1 - x)^3``: the crossing at ``t = 1`` is tangential."""
    return ModelSpec(
        name="grazing",
        dims=Dims(1, 0, 1, 1, 1, 1),
        f=lambda t, x, z, q: q[0] + 0.0 * x,
        g=None,
        layout=ParameterLayout(np.array([1.0]), (0,)),
        x0=np.array([0.0]),
        z0_guess=np.zeros(0),
        guards=lambda t, x, z, q: (1.0 - x) ** 3,
        reset=lambda e, t, x, z, q: x + 0.0,
        reset_indices=((),),
        T=T,
        param_names=("rate",),
    )


def make_model(name: str, n_balls: int = 1, seed: int = 0, T: Optional[float] = None) -> ModelSpec:
    """Factory used by the command line."""
    if name == "cauer":
        m = make_cauer()
    elif name == "balls":
        m = make_bouncing_balls(n_balls, seed=seed)
    elif name == "bounce1d":
        m = make_bounce_1d()
    elif name == "decay":
        m = make_decay()
    elif name == "ramp":
        m = make_ramp()
    else:
        raise InvalidArgumentError(f"unknown model {name!r}")
    if T is not None:
        from dataclasses import replace

        m = replace(m, T=float(T))
    return m


# -- synthetic data ------------------------------------------------------------------


def target_grid(T: float, N_targets: int) -> np.ndarray:
    if N_targets < 1:
        raise InvalidArgumentError("N_targets must be at least 1")
    return T * np.arange(1, N_targets + 1) / N_targets


def generate_synthetic_data(model: ModelSpec, p_true: Optional[Sequence[float]] = None, N_targets: int = 500,
                            noise_std: float = 0.0, seed: int = 0, cfg: Optional[SimConfig] = None,
                            T: Optional[float] = None) -> TargetSet:
    """Uniform targets on ``(0, T]`` with hard-selected outputs at truth plus Gaussian noise."""
    T = float(model.T if T is None else T)
    p = model.layout.p_base if p_true is None else model.full_params(p_true)
    traj = simulate(model, p, T, cfg)
    if traj.saturated:
        raise SetupError("truth simulation saturated; raise K_max", operation="generate_synthetic_data")
    targets = TargetSet(target_grid(T, N_targets))
    y = predict(model, traj, targets, HARD).y
    if noise_std > 0:
        y = y + np.random.default_rng(seed).normal(0.0, noise_std, size=y.shape)
    return targets.with_data(y)
