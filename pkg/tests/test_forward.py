import numpy as np
import pytest

from _models import free_fall, spec
from hybrid_dae import tangent as tg
from hybrid_dae.benchmarks import BALLS_TRUTH, generate_synthetic_data, make_bounce_1d, make_bouncing_balls, \
    make_decay, make_grazing
from hybrid_dae.errors import GrazingEventError
from hybrid_dae.forward import gradient_forward
from hybrid_dae.optim import fd_gradient, model_loss_fn
from hybrid_dae.sensitivity import event_time_sensitivity, sensitivity_jump, sensitivity_rhs
from hybrid_dae.simulator import SimConfig, simulate
from hybrid_dae.targets import TargetSet, segment_sensitivity, segment_state

TIGHT = SimConfig(rtol=1e-10, atol=1e-10)


def test_linear_growth_sensitivity():
    m = spec(lambda t, x, z, q: q[0] * x, 1, [0.3], x0=[1.0])
    traj = simulate(m, m.layout.p_base, 1.0, TIGHT, sensitivities=True)
    S = segment_sensitivity(traj.segments[0], 1.0)
    assert S[0, 0] == pytest.approx(np.exp(0.3), rel=1e-8)
    Sd = sensitivity_rhs(m, 0.5, np.array([2.0]), np.zeros(0), np.array([[1.0]]), np.array([0.3]))
    assert Sd[0, 0] == pytest.approx(0.3 + 2.0, abs=1e-15)


def test_parameter_free_rhs_has_zero_sensitivity_rate():
    m = spec(lambda t, x, z, q: 0.0 * x + 1.0, 2, [1.0, 2.0])
    Sd = sensitivity_rhs(m, 0.0, np.ones(2), np.zeros(0), np.ones((2, 2)), m.layout.p_base)
    assert Sd.shape == (2, 2) and np.all(Sd == 0)


def test_only_optimized_columns():
    m = make_bounce_1d().with_params(opt_indices=(1,))
    traj = simulate(m, m.layout.p_base, 2.0, sensitivities=True)
    assert traj.segments[0].nodes_S.shape[2] == 1


def test_free_fall_event_time_sensitivity():
    m = free_fall()
    traj = simulate(m, m.layout.p_base, 2.0, TIGHT, sensitivities=True)
    ev = traj.events[0]
    dtau, phidot = event_time_sensitivity(m, ev.tau, ev.x_minus, ev.z_minus, ev.S_minus, traj.p, 0)
    assert phidot < 0
    assert dtau[0] == pytest.approx(-np.sqrt(20 / 9.81) / (2 * 9.81), abs=1e-9)
    assert ev.dtau[0] == pytest.approx(-ev.tau / (2 * 9.81), rel=1e-8)


def test_parameter_free_guard_and_flow():
    m = spec(lambda t, x, z, q: 0.0 * x + 1.0, 1, [5.0], guards=lambda t, x, z, q: tg.stack([0.5 - x[0]]), n_e=1)
    dtau, _ = event_time_sensitivity(m, 0.5, np.array([0.5]), np.zeros(0), np.zeros((1, 1)), m.layout.p_base, 0)
    assert dtau[0] == 0.0


def test_time_triggered_guard():
    m = spec(lambda t, x, z, q: 0.0 * x + 1.0, 1, [0.5], guards=lambda t, x, z, q: tg.stack([q[0] - t + 0.0 * x[0]]),
             n_e=1)
    dtau, phidot = event_time_sensitivity(m, 0.5, np.array([0.5]), np.zeros(0), np.zeros((1, 1)), m.layout.p_base, 0)
    assert phidot == pytest.approx(-1.0) and dtau[0] == pytest.approx(1.0, abs=1e-15)


def test_identity_reset_continuous_flow_keeps_sensitivity():
    m = spec(lambda t, x, z, q: q[0] + 0.0 * x, 1, [1.0], guards=lambda t, x, z, q: tg.stack([0.5 - x[0]]), n_e=1)
    S = np.array([[0.25]])
    Sp = sensitivity_jump(m, 0.5, np.array([-0.25]), np.array([0.5]), np.zeros(0), S, m.layout.p_base, 0,
                          np.array([0.5]), np.zeros(0))
    assert np.allclose(Sp, S, atol=1e-15)


def test_frozen_time_jump_is_chain_rule():
    m = make_bounce_1d(e_g=0.8)
    S = np.array([[1.0, 2.0], [3.0, 4.0]])
    xm, xp = np.array([0.0, -5.0]), np.array([0.0, 4.0])
    Sp = sensitivity_jump(m, 1.0, np.zeros(2), xm, np.zeros(0), S, m.layout.p_base, 0, xp, np.zeros(0))
    expected = np.diag([1.0, -0.8]) @ S + np.array([[0.0, 0.0], [0.0, 5.0]])
    assert np.allclose(Sp, expected, atol=1e-15)


def test_bounce_jump_matches_fd():
    m = make_bounce_1d()
    p = m.layout.p_base
    traj = simulate(m, p, 2.0, TIGHT, sensitivities=True)
    t_probe = traj.events[0].tau + 0.05
    S = segment_sensitivity(traj.segments[1], t_probe)
    h = 1e-6
    fd = np.zeros_like(S)
    for j in range(2):
        dp = np.zeros(2)
        dp[j] = h * p[j]
        xp = segment_state(simulate(m, p + dp, 2.0, TIGHT).segments[1], t_probe)
        xm = segment_state(simulate(m, p - dp, 2.0, TIGHT).segments[1], t_probe)
        fd[:, j] = (xp - xm) / (2 * dp[j])
    assert np.max(np.abs(S - fd) / np.maximum(np.abs(fd), 1e-8)) <= 1e-4


def test_single_ball_gradient_matches_fd():
    m = make_bouncing_balls(1, seed=0).with_params(opt_indices=(0, 1))
    p0 = m.layout.extract(m.layout.p_base) * np.array([1.02, 0.97])
    traj = simulate(m, m.layout.p_base, 3.0, TIGHT)
    tau = traj.events[0].tau
    t = np.linspace(0.05, 2.95, 60)
    t = t[np.abs(t - tau) > 0.1]
    ts = generate_synthetic_data(m, m.layout.extract(m.layout.p_base), 10, 0.0, 0, TIGHT, 3.0)
    ts = TargetSet(t, np.vstack([np.interp(t, ts.times, ts.data[:, i]) for i in range(4)]).T)
    J, g = gradient_forward(m, p0, ts, TIGHT, T=3.0)
    fd = fd_gradient(model_loss_fn(m, ts, TIGHT, T=3.0), p0)
    assert not fd.flagged.any()
    assert np.max(np.abs(g - fd.grad) / np.abs(fd.grad)) <= 1e-5


def test_uninfluential_parameter_has_zero_gradient():
    m = spec(lambda t, x, z, q: -q[0] * x + 0.0 * q[1], 1, [1.0, 2.0], x0=[1.0])
    ts = TargetSet([0.5, 1.0], np.array([[0.1], [0.2]]))
    _, g = gradient_forward(m, m.layout.p_base, ts)
    assert g[1] == 0.0 and g[0] != 0.0


def test_quadratic_model_stationary_at_truth():
    m = make_decay()
    ts = generate_synthetic_data(m, [3.0], 50, 0.0, 0, TIGHT)
    J, g = gradient_forward(m, np.array([3.0]), ts, TIGHT)
    assert J <= 1e-16 and abs(g[0]) <= 1e-8


def test_saturation_gives_inf_and_zeros():
    m = make_bounce_1d()
    ts = TargetSet([1.0], np.zeros((1, 2)))
    J, g = gradient_forward(m, m.layout.p_base, ts, SimConfig(K_max=1), T=3.0)
    assert J == np.inf and np.all(g == 0)


def test_grazing_aborts_gradient_with_loss():
    m = make_grazing()
    ts = TargetSet([0.5, 1.5], np.zeros((2, 1)))
    with pytest.raises(GrazingEventError) as info:
        gradient_forward(m, m.layout.p_base, ts)
    assert np.isfinite(info.value.loss)


def test_event_time_target_matches_one_sided_fd():
    m = make_bounce_1d()
    p = m.layout.p_base
    # the target sits on the event time of the sensitivity-carrying run, which the gradient uses
    tau = simulate(m, p, 3.0, TIGHT, sensitivities=True).events[0].tau
    ts = TargetSet([0.5, tau, 2.5], np.ones((3, 2)))
    _, g = gradient_forward(m, p, ts, TIGHT, T=3.0)
    fn = model_loss_fn(m, ts, TIGHT, T=3.0)
    for j in range(2):
        dp = np.zeros(2)
        dp[j] = 1e-6 * p[j]
        # both probes have larger g_c or e_g, so tau moves earlier and the post-event branch is kept
        fd = (fn(p + 2 * dp)[0] - fn(p + dp)[0]) / dp[j]
        assert abs(g[j] - fd) <= 1e-3 * max(1.0, abs(fd))


def test_balls_truth_gradient_zero():
    m = make_bouncing_balls(1, seed=0)
    ts = generate_synthetic_data(m, BALLS_TRUTH, 100, 0.0, 0, TIGHT, 3.0)
    J, g = gradient_forward(m, BALLS_TRUTH, ts, TIGHT, T=3.0)
    assert J <= 1e-18 and np.max(np.abs(g)) <= 1e-8
