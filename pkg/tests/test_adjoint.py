import copy

import numpy as np
import pytest

from _models import spec
from hybrid_dae import tangent as tg
from hybrid_dae.adjoint import (EventJacobians, PendingEvent, SweepResult, _SegmentOps,
                                adjoint_on_discrete, build_pending, discrete_loss, event_adjoint, event_jacobians,
                                event_residual, gradient_adjoint, loss_loads, node_partials, resolve_pending,
                                segment_sweep, step_adjoint, step_jacobians, trapezoid_forward, trapezoid_from_rk,
                                trapezoid_residual)
from hybrid_dae.benchmarks import (BALLS_TRUTH, CAUER_TRUTH, generate_synthetic_data, make_bouncing_balls, make_cauer,
                                   make_ramp)
from hybrid_dae.errors import DegenerateEventError, StaleTrajectoryError
from hybrid_dae.forward import gradient_forward
from hybrid_dae.simulator import SimConfig, simulate
from hybrid_dae.targets import TargetSet

TIGHT = SimConfig(rtol=1e-10, atol=1e-10)


def _scalar_zero_rhs():
    return spec(lambda t, x, z, q: 0.0 * x, 1, [1.0])


def test_trapezoid_residual_examples():
    m = spec(lambda t, x, z, q: 0.0 * x + 1.0, 1, [1.0])
    assert trapezoid_residual(m, np.array([0.0]), np.array([1.0]), 0.0, 1.0, m.layout.p_base)[0] == 0.0
    m = spec(lambda t, x, z, q: q[0] * x, 1, [1.0])
    xn = 1.05 / 0.95
    assert abs(trapezoid_residual(m, np.array([1.0]), np.array([xn]), 0.0, 0.1, m.layout.p_base)[0]) <= 1e-15
    m = spec(lambda t, x, z, q: 0.0 * x, 1, [1.0], g=lambda t, x, z, q: z - x, n_z=1)
    R = trapezoid_residual(m, np.array([0.0, 0.0]), np.array([1.0, 3.0]), 0.0, 0.1, m.layout.p_base)
    assert R[1] == 2.0


def test_step_adjoint_scalar_example():
    m = _scalar_zero_rhs()
    n = node_partials(m, 0.0, np.array([1.0]), np.zeros(0), m.layout.p_base)
    st = step_jacobians(n, n, 0.1)
    assert st.J_n[0, 0] == -1.0 and st.J_c[0, 0] == 1.0
    lam, a_c, dqp, d_c, d_n = step_adjoint(np.array([1.0]), st, np.zeros(1))
    assert lam[0] == 1.0 and a_c[0] == 1.0 and np.all(dqp == 0)
    lam, a_c, dqp, d_c, d_n = step_adjoint(np.zeros(1), st, np.zeros(1))
    assert np.all(lam == 0) and np.all(a_c == 0) and np.all(dqp == 0) and d_c == 0 and d_n == 0


def test_segment_sweep_examples():
    m = _scalar_zero_rhs()
    dtraj = trapezoid_forward(m, m.layout.p_base, [], [], 1.0, n_nodes=2)
    ops = _SegmentOps(dtraj.segments[0])
    zero = segment_sweep(ops, np.zeros(1), [np.zeros(1)] * 2)
    assert np.all(zero.a_s == 0) and np.all(zero.qp == 0) and zero.qts == 0 and zero.qte == 0
    one = segment_sweep(ops, np.ones(1), [np.zeros(1)] * 2)
    assert one.a_s[0] == 1.0
    _, _, _, d_c, d_n = step_adjoint(np.ones(1), ops.steps[0], np.zeros(1))
    assert one.qts == pytest.approx(d_c) and one.qte == pytest.approx(d_n)


def test_segment_sweep_time_identity():
    m = make_cauer()
    d = trapezoid_forward(m, CAUER_TRUTH, [], [], 2.0, n_nodes=9)
    ops = _SegmentOps(d.segments[0])
    rng = np.random.default_rng(3)
    loads = [rng.normal(size=12) for _ in range(9)]
    a = rng.normal(size=12)
    total = 0.0
    a_n = a + loads[-1]
    for k in range(len(ops.steps) - 1, -1, -1):
        _, a_n, _, d_c, d_n = step_adjoint(a_n, ops.steps[k], loads[k], ops.lus[k])
        total += d_c + d_n
    res = segment_sweep(ops, a, loads)
    assert res.qts + res.qte == pytest.approx(total, rel=1e-12)


def test_event_residual_examples():
    m = spec(lambda t, x, z, q: 0.0 * x, 1, [0.5], guards=lambda t, x, z, q: tg.stack([x[0]]), n_e=1,
             reset=lambda e, t, x, z, q: -q[0] * x, reset_indices=((0,),))
    E = event_residual(m, 1.0, np.array([0.0]), np.array([0.0]), m.layout.p_base, 0)
    assert E.shape == (2,)
    c = make_cauer()
    traj = simulate(c, CAUER_TRUTH)
    ev = traj.events[0]
    wp, wm = np.concatenate(ev.w_plus), np.concatenate(ev.w_minus)
    E = event_residual(c, ev.tau, wp, wm, CAUER_TRUTH, ev.event_index)
    assert E.shape == (13,)
    assert np.max(np.abs(E)) <= 1e-10
    wq = wp.copy()
    wq[0] += 1e-3  # vC1 is not reset
    dE = event_residual(c, ev.tau, wq, wm, CAUER_TRUTH, ev.event_index) - E
    assert np.count_nonzero(np.abs(dE[:8]) > 1e-15) == 1 and dE[1:8].max() == pytest.approx(1e-3)


def test_event_adjoint_examples():
    ev = EventJacobians(np.array([[0.0], [1.0]]), np.zeros((2, 1)), np.zeros((2, 1)), np.zeros(2))
    mu0, v = event_adjoint(ev, np.array([2.5]))
    assert np.allclose(mu0, [0.0, -2.5], atol=1e-15) and np.allclose(v, [1.0, 0.0], atol=1e-15)
    mu0, v2 = event_adjoint(ev, np.zeros(1))
    assert np.all(mu0 == 0) and np.array_equal(v, v2)
    with pytest.raises(DegenerateEventError):
        event_adjoint(EventJacobians(np.zeros((2, 1)), np.zeros((2, 1)), np.zeros((2, 1)), np.zeros(2)), np.ones(1))


def test_build_pending_examples():
    ev = EventJacobians(np.array([[0.0], [1.0]]), np.array([[0.3], [0.7]]), np.zeros((2, 2)), np.zeros(2))
    pend = build_pending(ev, np.zeros(2), np.array([1.0, 0.0]), 0.0, 0.0)
    assert np.all(pend.a_minus_0 == 0) and np.all(pend.qp_0 == 0) and pend.qtau_0 == 0
    assert np.all(pend.qp_v == 0)
    mu0, v = event_adjoint(ev, np.array([2.0]))
    pend = build_pending(ev, mu0, v, 0.0, 0.0)
    assert pend.a_minus_0[0] == pytest.approx(0.7 * -2.0) and pend.a_minus_v[0] == pytest.approx(0.3)


def test_resolve_pending_example():
    pend = PendingEvent(np.zeros(1), np.zeros(1), np.zeros(2), np.zeros(2), 1.0, 3.0)
    s0 = SweepResult(np.zeros(1), np.zeros(2), 0.0, 1.0)
    sv = SweepResult(np.zeros(1), np.zeros(2), 0.0, 1.0)
    assert resolve_pending(pend, s0, sv)[0] == -0.5
    sv = SweepResult(np.zeros(1), np.zeros(2), 0.0, 0.0)
    assert resolve_pending(pend, s0, sv)[0] == pytest.approx(-2.0 / 3.0)


@pytest.fixture(scope="module")
def balls():
    m = make_bouncing_balls(3, seed=0)
    cfg = SimConfig(event_samples=4, rtol=1e-10, atol=1e-10)
    tg_ = generate_synthetic_data(m, BALLS_TRUTH, 200, 0.0, 0, cfg)
    p = BALLS_TRUTH * np.array([1.01, 0.99, 1.005])
    traj = simulate(m, m.full_params(p), None, cfg)
    return m, p, tg_, traj, trapezoid_from_rk(m, traj, 17)


@pytest.fixture(scope="module")
def cauer():
    m = make_cauer()
    tg_ = generate_synthetic_data(m, CAUER_TRUTH, 100, 0.0, 0, TIGHT)
    p = CAUER_TRUTH * np.exp(np.linspace(-0.02, 0.02, 7))
    traj = simulate(m, p, None, TIGHT)
    return m, p, tg_, traj, trapezoid_from_rk(m, traj, 17)


@pytest.mark.parametrize("case", ["balls", "cauer"])
def test_feasibility(case, request):
    m, p, _, traj, d = request.getfixturevalue(case)
    assert d.step_feasibility <= 1e-10
    assert max(d.event_feasibility) <= 1e-9
    assert len(d.taus) == traj.n_events


@pytest.mark.parametrize("case", ["balls", "cauer"])
def test_lagrangian_identity(case, request):
    m, p, tg_, _, d = request.getfixturevalue(case)
    J = loss_loads(m, d, tg_).J
    rng = np.random.default_rng(0)
    for _ in range(10):
        L = J
        for seg in d.segments:
            tt = seg.times
            for k in range(1, len(tt)):
                R = trapezoid_residual(m, seg.W[k - 1], seg.W[k], tt[k - 1], tt[k], d.p)
                L += rng.normal(size=len(R)) @ R
        for mm, e in enumerate(d.event_indices):
            E = event_residual(m, d.taus[mm], d.segments[mm + 1].W[0], d.segments[mm].W[-1], d.p, e)
            L += rng.normal(size=len(E)) @ E
        assert abs(L - J) <= 1e-9 * (1 + abs(J))


@pytest.mark.parametrize("case", ["balls", "cauer"])
def test_null_space_and_mu0_invariance(case, request):
    m, p, tg_, _, d = request.getfixturevalue(case)
    for mm, e in enumerate(d.event_indices):
        ev = event_jacobians(m, d.taus[mm], d.segments[mm + 1].W[0], d.segments[mm].W[-1], d.p, e)
        a = np.random.default_rng(mm).normal(size=ev.A.shape[1])
        mu0, v = event_adjoint(ev, a)
        assert np.max(np.abs(ev.A.T @ v)) <= 1e-12 and np.linalg.norm(v) == pytest.approx(1.0, abs=1e-14)
        assert np.max(np.abs(ev.A.T @ mu0 + a)) <= 1e-12
    g0 = adjoint_on_discrete(m, d, tg_).grad
    g1 = adjoint_on_discrete(m, d, tg_, mu0_shift=1.0).grad
    assert np.allclose(g0, g1, rtol=1e-9, atol=1e-12 * np.abs(g0).max())


@pytest.mark.parametrize("case", ["balls", "cauer"])
def test_discrete_exactness(case, request):
    m, p, tg_, traj, d = request.getfixturevalue(case)
    rep = adjoint_on_discrete(m, d, tg_)
    fd = np.zeros_like(p)
    for j in range(len(p)):
        h = 1e-6 * p[j]
        dp = np.zeros_like(p)
        dp[j] = h
        Jp = discrete_loss(m, p + dp, tg_, traj.event_indices, d.taus, traj.T, 17)
        Jm = discrete_loss(m, p - dp, tg_, traj.event_indices, d.taus, traj.T, 17)
        fd[j] = (Jp - Jm) / (2 * h)
    assert np.linalg.norm(rep.grad - fd) <= 1e-6 * np.linalg.norm(fd)
    assert not rep.warnings


def test_zero_event_model_matches_forward():
    m = make_ramp()
    truth = m.layout.extract(m.layout.p_base)
    tg_ = generate_synthetic_data(m, truth, 40, 0.0, 0, TIGHT)
    p = truth * np.array([1.1, 0.9, 1.2])
    traj = simulate(m, m.full_params(p), None, TIGHT)
    J, g, _ = gradient_adjoint(m, traj, tg_)
    Jf, gf = gradient_forward(m, p, tg_, TIGHT)
    assert J == pytest.approx(Jf, rel=1e-9)
    assert np.allclose(g, gf, rtol=1e-6)


def test_zero_mismatch_gives_zero_gradient():
    m = make_ramp()
    p = m.layout.extract(m.layout.p_base)
    traj = simulate(m, m.layout.p_base)
    d = trapezoid_from_rk(m, traj)
    ts = TargetSet(np.linspace(0.1, 2.0, 20), np.zeros((20, 3)))
    loads = loss_loads(m, d, ts)
    assert loads.J > 0
    # data equal to the discrete predictions themselves
    ts_fit = TargetSet(ts.times, loads.y_hat)
    rep = adjoint_on_discrete(m, d, ts_fit)
    assert rep.loss == 0.0 and np.all(rep.grad == 0)


def test_reruns_bit_identical(balls):
    m, p, tg_, traj, _ = balls
    a = gradient_adjoint(m, traj, tg_, n_nodes=17)[1]
    b = gradient_adjoint(m, traj, tg_, n_nodes=17)[1]
    assert a.tobytes() == b.tobytes()


def test_stale_trajectory_rejected(balls):
    m, p, tg_, _, d = balls
    bad = copy.deepcopy(d)
    bad.step_feasibility = 1e-5
    with pytest.raises(StaleTrajectoryError):
        adjoint_on_discrete(m, bad, tg_)


def test_report_json(balls):
    m, p, tg_, traj, _ = balls
    _, _, rep = gradient_adjoint(m, traj, tg_, n_nodes=17)
    js = rep.to_json()
    assert set(js) == {"loss", "grad", "per_event", "feasibility_max", "warnings"}
    assert len(js["per_event"]) == traj.n_events
    assert {"tau", "c", "denominator", "feasibility"} <= set(js["per_event"][0])
