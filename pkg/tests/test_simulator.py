import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _models import const_guards, free_fall, spec
from hybrid_dae import tangent as tg
from hybrid_dae.benchmarks import CAUER_TRUTH, make_bounce_1d, make_bouncing_balls, make_cauer, make_decay
from hybrid_dae.errors import BracketError, InternalError, InvalidArgumentError
from hybrid_dae.simulator import (KIND_EVENT, KIND_PADDING, KIND_SEGMENT, SimConfig, active_guard_mask,
                                  apply_reset, composite_guard, consistent_initial, integrate_segment, locate_event,
                                  reduced_rhs, select_event_index, simulate)

TIGHT = SimConfig(rtol=1e-10, atol=1e-10)
TAU1 = np.sqrt(20 / 9.81)


def test_reduced_rhs_examples():
    m = spec(lambda t, x, z, q: -x, 1, [1.0])
    assert reduced_rhs(m, 0.0, np.array([2.0]), m.layout.p_base, np.zeros(0))[0][0] == -2.0
    m = spec(lambda t, x, z, q: z + 0.0 * x, 1, [4.0], g=lambda t, x, z, q: z - q, n_z=1)
    assert reduced_rhs(m, 0.0, np.array([1.0]), np.array([4.0]), np.zeros(1))[0][0] == pytest.approx(4.0, abs=1e-12)
    m = spec(lambda t, x, z, q: z * x, 1, [0.0], g=lambda t, x, z, q: z * z * z + z - x, n_z=1)
    xd, z = reduced_rhs(m, 0.0, np.array([2.0]), np.zeros(1), np.array([0.8]))
    assert xd[0] == pytest.approx(2.0, abs=1e-10) and z[0] == pytest.approx(1.0, abs=1e-10)


def test_active_guard_mask_examples():
    x, z, p = np.zeros(1), np.zeros(0), np.zeros(1)
    m = spec(lambda t, x, z, q: 0.0 * x, 1, [0.0], guards=const_guards(0.2, -0.1), n_e=2)
    assert active_guard_mask(m, 0.0, x, z, p, 1e-9).tolist() == [True, False]
    m = spec(lambda t, x, z, q: 0.0 * x, 1, [0.0], guards=const_guards(0.0), n_e=1)
    assert active_guard_mask(m, 0.0, x, z, p, 1e-9).tolist() == [False]
    m = spec(lambda t, x, z, q: 0.0 * x, 1, [0.0], guards=const_guards(1e-12), n_e=1)
    assert active_guard_mask(m, 0.0, x, z, p, 1e-9).tolist() == [False]


def test_composite_guard_examples():
    x, p = np.zeros(1), np.zeros(1)
    m = spec(lambda t, x, z, q: 0.0 * x, 1, [0.0], guards=const_guards(0.2, 0.7), n_e=2)
    assert composite_guard(m, 0.0, x, p, [True, True], np.zeros(0)) == 0.2
    assert composite_guard(m, 0.0, x, p, [False, False], np.zeros(0), C_big=1e6) == 1e6
    m = spec(lambda t, x, z, q: 0.0 * x, 1, [0.0], guards=const_guards(0.2, -0.3), n_e=2)
    assert composite_guard(m, 0.0, x, p, [True, False], np.zeros(0)) == 0.2


def test_locate_event_examples():
    assert locate_event(0.0, 2.0, lambda t: 1.0 - t) == pytest.approx(1.0, abs=1e-10)
    assert locate_event(1.0, 2.0, np.cos) == pytest.approx(np.pi / 2, abs=1e-10)
    with pytest.raises(BracketError):
        locate_event(0.0, 1.0, lambda t: 1.0)


@given(st.floats(0.05, 0.95), st.floats(0.2, 5.0))
def test_locate_event_residual_and_bracket(root, k):
    tau = locate_event(0.0, 1.0, lambda t: np.tanh(k * (root - t)), tol_event=1e-10)
    assert 0.0 <= tau <= 1.0
    assert abs(np.tanh(k * (root - tau))) <= 1e-10


def test_select_event_index_examples():
    x, p = np.zeros(1), np.zeros(1)
    m = spec(lambda t, x, z, q: 0.0 * x, 1, [0.0], guards=const_guards(1e-12, 0.4), n_e=2)
    assert select_event_index(m, 0.0, x, p, np.array([True, True]), np.zeros(0)) == 0
    assert select_event_index(m, 0.0, x, p, np.array([False, True]), np.zeros(0)) == 1
    m = spec(lambda t, x, z, q: 0.0 * x, 1, [0.0], guards=const_guards(0.0, 0.0), n_e=2)
    assert select_event_index(m, 0.0, x, p, np.array([True, True]), np.zeros(0)) == 0
    with pytest.raises(InternalError):
        select_event_index(m, 0.0, x, p, np.array([False, False]), np.zeros(0))


def test_apply_reset_examples():
    m = make_bounce_1d(e_g=0.8)
    xp, _ = apply_reset(m, 0, 1.0, np.array([0.0, -5.0]), np.zeros(0), m.layout.p_base)
    assert xp[1] == pytest.approx(4.0, abs=1e-15) and xp[0] == 0.0
    ident = spec(lambda t, x, z, q: 0.0 * x, 1, [2.0], g=lambda t, x, z, q: z - q * x, n_z=1,
                 guards=const_guards(1.0), n_e=1)
    xp, zp = apply_reset(ident, 0, 0.0, np.array([1.5]), np.array([3.0]), np.array([2.0]))
    assert xp[0] == 1.5 and zp[0] == pytest.approx(3.0, abs=1e-12)
    c = make_cauer()
    xm, zm = consistent_initial(c, CAUER_TRUTH)
    xm[2] = 0.5
    zm = reduced_rhs(c, 1.0, xm, CAUER_TRUTH, zm)[1]
    xp, zp = apply_reset(c, 0, 1.0, xm, zm, CAUER_TRUTH)
    assert xp[2] == 0.0
    assert np.array_equal(np.delete(xp, 2), np.delete(xm, 2))
    assert np.max(np.abs(c.g(1.0, xp, zp, CAUER_TRUTH))) <= 1e-10


def test_constant_segment_is_terminal():
    m = spec(lambda t, x, z, q: 0.0 * x, 1, [0.0], x0=[1.0])
    seg, out, _ = integrate_segment(m, 0.0, np.array([1.0]), np.zeros(0), np.zeros(1), np.zeros(0, bool), 1.0,
                                    SimConfig())
    assert out.kind == "terminal" and seg.t_end == 1.0
    assert np.all(seg.nodes_x == 1.0) and seg.n_nodes >= 33


def test_free_fall_event_time():
    m = free_fall()
    seg, out, _ = integrate_segment(m, 0.0, m.x0, np.zeros(0), m.layout.p_base, np.array([True]), 2.0, TIGHT)
    assert out.kind == "event"
    assert abs(out.t_hit - TAU1) <= 1e-8
    assert seg.t_end == out.t_hit and seg.eta[0] == 0.0 and seg.eta[-1] == 1.0


def test_positive_guard_reaches_terminal():
    m = spec(lambda t, x, z, q: 0.0 * x + 1.0, 1, [0.0], guards=lambda t, x, z, q: tg.stack([5.0 - x[0]]), n_e=1)
    traj = simulate(m, m.layout.p_base, 2.0)
    assert traj.n_events == 0 and traj.segments[0].t_end == 2.0


def test_guard_free_model_single_segment():
    m = make_decay()
    traj = simulate(m, m.layout.p_base)
    assert len(traj.segments) == 1 and traj.n_events == 0 and not traj.saturated
    assert traj.segments[-1].nodes_x[-1, 0] == pytest.approx(np.exp(-3.0), rel=1e-7)


def test_single_bounce():
    m = make_bounce_1d()
    traj = simulate(m, m.layout.p_base, 3.0, TIGHT)
    assert traj.n_events == 1 and not traj.saturated
    assert traj.events[0].tau == pytest.approx(1.427843, abs=1e-6)
    assert abs(traj.events[0].tau - TAU1) <= 1e-8
    assert traj.events[0].x_plus[1] == pytest.approx(0.8 * 9.81 * TAU1, rel=1e-8)
    longer = simulate(m, m.layout.p_base, 4.0, TIGHT)
    tau2 = TAU1 + 2 * 0.8 * 9.81 * TAU1 / 9.81
    assert longer.n_events == 2 and longer.events[1].tau == pytest.approx(tau2, abs=1e-7)


def test_saturation_flag():
    m = make_bounce_1d()
    traj = simulate(m, m.layout.p_base, 3.0, SimConfig(K_max=1))
    assert traj.saturated and len(traj.segments) == 1


def test_block_layout_alternates():
    m = make_bounce_1d()
    traj = simulate(m, m.layout.p_base, 4.0, SimConfig(K_max=4))
    kinds = traj.kinds.tolist()
    assert len(kinds) == 2 * 4 - 1
    assert kinds[:5] == [KIND_SEGMENT, KIND_EVENT, KIND_SEGMENT, KIND_EVENT, KIND_SEGMENT]
    assert all(k == KIND_PADDING for k in kinds[5:])
    for k, seg in enumerate(traj.segments[1:]):
        assert seg.t_start == traj.events[k].tau


def _check_events(model, traj, cfg):
    p = traj.p
    for ev in traj.events:
        phi = model.guard_values(ev.tau, ev.x_minus, ev.z_minus, p)[ev.event_index]
        assert abs(phi) <= cfg.tol_event
        psi = np.asarray(model.reset(ev.event_index, ev.tau, ev.x_minus, ev.z_minus, p), dtype=float)
        assert np.max(np.abs(ev.x_plus - psi)) == 0.0
        if model.dims.n_z:
            assert np.max(np.abs(model.g(ev.tau, ev.x_plus, ev.z_plus, p))) <= cfg.algebraic.tol_g


@pytest.mark.parametrize("name", ["cauer", "balls"])
def test_event_feasibility_and_mask_soundness(name):
    if name == "cauer":
        m, es = make_cauer(), 1
    else:
        m, es = make_bouncing_balls(3, seed=0), 4
    cfg = SimConfig(event_samples=es)
    traj = simulate(m, m.layout.p_base, None, cfg)
    assert traj.n_events >= 5 and not traj.saturated
    _check_events(m, traj, cfg)
    for seg in traj.segments:
        phi = composite_guard(m, seg.t_start, seg.nodes_x[0], traj.p, seg.mask, seg.nodes_z[0], cfg.C_big)
        assert phi > 0
    for ev in traj.events:
        assert ev.phi_dot <= -cfg.tol_transv
    assert not traj.warnings


def test_determinism():
    m = make_cauer()
    a = simulate(m, m.layout.p_base)
    b = simulate(m, m.layout.p_base)
    assert a.event_times.tobytes() == b.event_times.tobytes()
    for sa, sb in zip(a.segments, b.segments):
        assert sa.nodes_x.tobytes() == sb.nodes_x.tobytes()
        assert sa.nodes_z.tobytes() == sb.nodes_z.tobytes()


def test_invalid_horizon():
    m = make_decay()
    with pytest.raises(InvalidArgumentError):
        simulate(m, m.layout.p_base, 0.0)
    with pytest.raises(InvalidArgumentError):
        SimConfig(K_max=0)


def test_grazing_warning_recorded():
    from hybrid_dae.benchmarks import make_grazing

    m = make_grazing()
    traj = simulate(m, m.layout.p_base)
    assert traj.warnings
