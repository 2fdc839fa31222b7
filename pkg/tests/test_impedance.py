import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forceskill.geometry import Pose, Twist, Wrench
from forceskill.impedance import (
    ControllerGains,
    ControllerLimits,
    ControllerState,
    ImpedanceController,
    MetaParams,
    adapt_step,
    clamp_desired_kernel,
    control_wrench,
    damping_for,
    feedforward_magnitude,
    meta_bounds,
    tracking_error,
)
from impedance_cases import bound_violations, fixed_point_errors

T = 1e-3


def scalar_meta(alpha=0.0, beta=0.0, gamma_alpha=0.0, gamma_beta=0.0):
    z = np.zeros(6)
    return MetaParams(z + [alpha, 0, 0, 0, 0, 0], z + [beta, 0, 0, 0, 0, 0],
                      z + gamma_alpha, z + gamma_beta)


def big_limits(K_max=1e6):
    return ControllerLimits(K_max=(K_max, K_max), Kdot_max=(1e9, 1e9), F_max=(1e3, 1e3), Fdot_max=(1e6, 1e6))


# --- meta bounds -----------------------------------------------------------------


def test_meta_bounds_translational_beta():
    b = meta_bounds(ControllerLimits(), T)
    assert b.beta[0] == 200000.0


def test_meta_bounds_rotational_beta_with_narrow_error_limit():
    b = meta_bounds(ControllerLimits(e_max=(0.005, 0.0017)), T)
    assert b.beta[3] == pytest.approx(173010, rel=1e-3)


def test_meta_bounds_gamma_beta():
    b = meta_bounds(ControllerLimits(), T)
    assert b.gamma_beta[0] == pytest.approx(5000 / (200000 * 2000), rel=1e-12)
    assert b.gamma_beta[0] == pytest.approx(1.25e-5, rel=1e-12)


def test_meta_bounds_feedforward():
    b = meta_bounds(ControllerLimits(), T)
    assert b.alpha[0] == pytest.approx(1.0 * T / 0.005)
    assert b.gamma_alpha[0] == pytest.approx(1.0 / (b.alpha[0] * 10.0))


def test_meta_bounds_saturate_exactly_at_the_rate_limit():
    # worst case of the stiffness law: e = eps = e_max, K = 0
    lim = ControllerLimits()
    b = meta_bounds(lim, T)
    kdot = b.beta / T * lim.e_max * lim.e_max
    np.testing.assert_allclose(kdot, lim.Kdot_max, rtol=1e-12)


def test_limits_reject_zero():
    with pytest.raises(ValueError):
        ControllerLimits(e_max=(0.0, 0.017))


def test_meta_rejects_negative():
    with pytest.raises(ValueError):
        MetaParams.shared((0.1, -0.1), (0, 0), (0, 0), (0, 0))


def test_meta_within():
    b = meta_bounds(ControllerLimits(), T)
    assert MetaParams.shared((0.1, 0.02), (1e5, 1e3), (0, 0), (0, 0)).within(b)
    assert not MetaParams.shared((0.1, 0.02), (3e5, 1e3), (0, 0), (0, 0)).within(b)


# --- tracking error, damping, wrench ---------------------------------------------


def test_tracking_error_examples():
    assert np.array_equal(tracking_error(np.zeros(6), np.zeros(6), 0.01), np.zeros(6))
    e = np.array([0.01, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(tracking_error(e, np.zeros(6), 0.01), e)
    assert tracking_error(0.002, 0.001, 0.5) == pytest.approx(0.0025, abs=1e-15)


def test_damping_examples():
    assert np.array_equal(damping_for(np.zeros(6), np.ones(6), 0.7), np.zeros(6))
    assert damping_for(2000.0, 2.0, 0.7) == pytest.approx(2 * 0.7 * math.sqrt(4000), rel=1e-12)
    assert damping_for(2000.0, 2.0, 0.7) == pytest.approx(88.54, abs=5e-3)
    assert damping_for(100.0, 1.0, 1.0) == pytest.approx(20.0)


def test_control_wrench_zero():
    s = ControllerState(np.zeros(6))
    w = control_wrench(s, np.zeros(6), np.zeros(6), Wrench(), np.zeros(6))
    assert w == Wrench()


def test_control_wrench_spring():
    s = ControllerState([1000.0, 0, 0, 0, 0, 0])
    w = control_wrench(s, [0.005, 0, 0, 0, 0, 0], np.zeros(6), Wrench(), np.zeros(6))
    np.testing.assert_allclose(w.to_vector(), [5.0, 0, 0, 0, 0, 0], atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-0.01, 0.01), min_size=6, max_size=6),
    st.lists(st.floats(-0.01, 0.01), min_size=6, max_size=6),
)
def test_control_wrench_superposition(e1, e2):
    s = ControllerState([1500.0, 800.0, 20.0, 100.0, 50.0, 5.0], Wrench([1, 2, 3], [0.1, 0.2, 0.3]))
    D, edot, Fd = np.arange(6.0), np.full(6, 0.1), Wrench([0, 0, 4], [0, 0, 0])
    e1, e2 = np.array(e1), np.array(e2)
    base = control_wrench(s, np.zeros(6), edot, Fd, D).to_vector()
    lhs = control_wrench(s, e1 + e2, edot, Fd, D).to_vector() - base
    rhs = (control_wrench(s, e1, edot, Fd, D).to_vector() - base) + (
        control_wrench(s, e2, edot, Fd, D).to_vector() - base
    )
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_feedforward_magnitude():
    s = ControllerState(np.zeros(6), Wrench([1, -2, 0], [0, 0, 0.5]))
    np.testing.assert_allclose(feedforward_magnitude(s, Wrench([0, 0, -3], [0, 0, 0])), [1, 2, 3, 0, 0, 0.5])


# --- adaptation ----------------------------------------------------------------


def test_adapt_without_drive_is_a_no_op():
    s = ControllerState([100.0, 200, 300, 10, 20, 30], Wrench([1, 2, 3], [0.1, 0.2, 0.3]))
    out = adapt_step(s, np.zeros(6), np.zeros(6), scalar_meta(0.2, 2e5), ControllerLimits(), T)
    np.testing.assert_array_equal(out.K, s.K)
    assert out.F_ff == s.F_ff


def test_adapt_stiffness_hand_example():
    s = ControllerState(np.zeros(6))
    e = np.array([0.004, 0, 0, 0, 0, 0])
    out = adapt_step(s, e, e, scalar_meta(beta=200000.0), ControllerLimits(), T)
    # Kdot = 200000 / 0.001 * 1.6e-5 = 3200 N/(m s)
    assert out.K[0] == pytest.approx(3.2, rel=1e-12)


def test_adapt_feedforward_hand_example():
    s = ControllerState(np.zeros(6))
    e = np.array([0.004, 0, 0, 0, 0, 0])
    out = adapt_step(s, e, e, scalar_meta(alpha=0.2), ControllerLimits(), T)
    # F_ffdot = 0.2 / 0.001 * 0.004 = 0.8 N/s
    assert out.F_ff.force[0] == pytest.approx(8e-4, rel=1e-12)


def test_adapt_clamps_rate():
    s = ControllerState(np.zeros(6))
    e = np.array([0.005, 0, 0, 0, 0, 0])
    out = adapt_step(s, e, 10 * e, scalar_meta(beta=200000.0), ControllerLimits(), T)
    assert out.K[0] == pytest.approx(5000 * T)


def test_bound_preservation_fuzz():
    assert bound_violations(100_000) == 0


def test_stiffness_fixed_point_matches_ode():
    transient, settled = fixed_point_errors()
    assert transient < 0.01
    assert settled < 1e-6


def test_stiffness_fixed_point_clamped():
    meta = scalar_meta(beta=1e4, gamma_beta=1e-5)
    ev = np.array([0.004, 0, 0, 0, 0, 0])
    s = ControllerState(np.zeros(6))
    for _ in range(2000):
        s = adapt_step(s, ev, ev, meta, big_limits(K_max=1.0), T)
    assert s.K[0] == 1.0


def test_forgetting_decays_monotonically():
    lim = ControllerLimits()
    b = meta_bounds(lim, T)
    meta = MetaParams(np.zeros(6), b.beta, np.zeros(6), b.gamma_beta)
    s = ControllerState(lim.K_max)
    prev = np.array(s.K)
    for _ in range(5000):
        s = adapt_step(s, np.zeros(6), np.zeros(6), meta, lim, T)
        assert np.all(s.K <= prev)
        prev = np.array(s.K)
    assert np.all(s.K < 1e-6 * np.array(lim.K_max))


# --- stepping ----------------------------------------------------------------


def test_desired_pose_clamped_to_error_limit():
    e_max = np.array(ControllerLimits().e_max)
    pos, quat = np.zeros(3), np.array([1.0, 0, 0, 0])
    e, t, q = clamp_desired_kernel(pos, quat, np.array([0.02, -0.001, 0]), quat.copy(), e_max)
    np.testing.assert_allclose(e, [0.005, -0.001, 0, 0, 0, 0], atol=1e-15)
    np.testing.assert_allclose(t, [0.005, -0.001, 0], atol=1e-15)


def test_controller_at_rest_commands_nothing():
    lim = ControllerLimits()
    pose = Pose([0.1, 0.2, 0.3])
    c = ImpedanceController(
        scalar_meta(), lim, ControllerGains(), np.full(6, 2.0), ControllerState.initial(lim, pose)
    )
    u = c.step(pose, Twist(), Twist(), Wrench())
    np.testing.assert_array_equal(u.to_vector(), np.zeros(6))
    np.testing.assert_allclose(c.state.K, 0.25 * np.array(lim.K_max))


def test_controller_follows_command_with_spring_and_damper():
    lim = ControllerLimits()
    pose = Pose.identity()
    K0 = 0.25 * np.array(lim.K_max)
    c = ImpedanceController(scalar_meta(), lim, ControllerGains(), np.full(6, 2.0), ControllerState.initial(lim, pose))
    u = c.step(pose, Twist(), Twist([0.1, 0, 0], [0, 0, 0]), Wrench([0, 0, 3.0], [0, 0, 0]))
    D = damping_for(K0, np.full(6, 2.0), 0.7)
    assert u.force[0] == pytest.approx(K0[0] * 0.1 * T + D[0] * 0.1, rel=1e-12)
    assert u.force[2] == pytest.approx(3.0)
