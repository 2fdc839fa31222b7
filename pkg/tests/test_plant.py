import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forceskill.geometry import PerceptVector, Pose, Twist, Wrench
from forceskill.plant import (
    CrossSection,
    PlantConfig,
    PlantState,
    SimulationIntegrityError,
    contact_kernel,
    contact_wrench,
    insertion_depth,
    make_scenario,
    plant_step,
)

QUIET = PlantConfig(wrench_noise_sigma=(0.0, 0.0))


def state_at(pose, scenario, twist=None):
    s = PlantState.at_rest(pose, scenario)
    if twist is None:
        return s
    return PlantState(PerceptVector(pose, twist, Wrench(), 0.0, True), anchors=s.anchors)


def run(state, applied, scenario, config, n, rng=None):
    rng = rng or np.random.default_rng(0)
    out = [state]
    for _ in range(n):
        state = plant_step(state, applied, scenario, config, rng)
        out.append(state)
    return out


# --- scenarios -----------------------------------------------------------------


def test_peg_scenario_dimensions():
    sc = make_scenario("peg")
    assert sc.cross_section.shape == "cylinder"
    assert sc.cross_section.dims[0] == 0.01
    assert sc.depth == 0.035
    assert sc.chamfer == 5e-4
    assert sc.clearance == 5e-5
    assert sc.max_rot_amplitude == 0.035


def test_puzzle_scenario_dimensions():
    sc = make_scenario("puzzle")
    assert sc.cross_section.shape == "triangle"
    assert sc.cross_section.dims[0] == 0.075
    assert sc.depth == 0.005
    assert sc.chamfer == 0.0
    assert sc.clearance == 1e-4
    assert sc.max_rot_amplitude == 0.09


def test_key_scenario_dimensions():
    sc = make_scenario("key")
    assert sc.depth == 0.0023
    assert sc.chamfer > 0
    assert sc.max_rot_amplitude == 0.0175


def test_unknown_scenario():
    with pytest.raises(ValueError):
        make_scenario("gear")


def test_scenario_invariants():
    with pytest.raises(ValueError):
        make_scenario("peg", clearance=0.0)
    with pytest.raises(ValueError):
        make_scenario("peg", depth=-1.0)
    with pytest.raises(ValueError):
        make_scenario("peg", chamfer=-1e-4)


def test_triangle_inradius():
    cs = CrossSection("triangle", (0.075,))
    assert cs.inradius() == pytest.approx(0.075 / (2 * math.sqrt(3)))


def test_plant_config_rejects_non_positive():
    with pytest.raises(ValueError):
        PlantConfig(contact_stiffness=0.0)
    with pytest.raises(ValueError):
        PlantConfig(wrench_noise_sigma=(-0.1, 0.0))


# --- contact ---------------------------------------------------------------------

# a spot on the flat top face, well away from the hole
FLAT = np.array([0.03, 0.0])


def test_separated_bodies_no_wrench():
    sc = make_scenario("peg")
    s = state_at(Pose([FLAT[0], FLAT[1], -0.001]), sc)
    assert contact_wrench(s, sc, QUIET) == Wrench()


def test_flat_penetration_gives_penalty_force():
    # hole frame z points into the block, so "up" is -z
    sc = make_scenario("peg")
    s = state_at(Pose([FLAT[0], FLAT[1], 1e-4]), sc)
    w = contact_wrench(s, sc, QUIET).to_vector()
    np.testing.assert_allclose(w[:3], [0, 0, -5.0], atol=1e-9)


def test_flat_penetration_in_rotated_hole_frame():
    hole = Pose.from_rotvec([0.1, -0.2, 0.3], [0.4, 0.0, 0.0])
    sc = make_scenario("peg", hole_pose=hole)
    pose = hole.compose(Pose([FLAT[0], FLAT[1], 1e-4]))
    w = contact_wrench(state_at(pose, sc), sc, QUIET).to_vector()
    expected = hole.rotation_matrix() @ np.array([0, 0, -5.0])
    np.testing.assert_allclose(w[:3], expected, atol=1e-9)


def test_damping_adds_to_approach():
    sc = make_scenario("peg")
    pose = Pose([FLAT[0], FLAT[1], 1e-4])
    w = contact_wrench(state_at(pose, sc, Twist([0, 0, 0.01], [0, 0, 0])), sc, QUIET).to_vector()
    # 5 N spring plus 200 N s/m * 0.01 m/s
    assert w[2] == pytest.approx(-7.0, abs=1e-9)


def test_stiction_holds_a_small_push():
    sc = make_scenario("peg")
    pose = Pose([FLAT[0], FLAT[1], 2e-4])
    push = Wrench([1.0, 0.0, 10.0], [0, 0, 0])  # 1 N < 0.3 * 10 N
    traj = run(state_at(pose, sc), push, sc, QUIET, 3000)
    # elastic pre-slip of the bristle is 1 N / 5e4 N/m = 20 um; after settling there is no drift
    settled = traj[2000].percept.pose.translation
    final = traj[-1].percept.pose.translation
    assert abs(final[0] - pose.translation[0]) < 5e-5
    assert np.linalg.norm(final[:2] - settled[:2]) < 1e-6


def test_push_above_friction_limit_slides():
    sc = make_scenario("peg")
    pose = Pose([FLAT[0], FLAT[1], 2e-4])
    push = Wrench([4.0, 0.0, 10.0], [0, 0, 0])  # 4 N > 0.3 * 10 N
    traj = run(state_at(pose, sc), push, sc, QUIET, 1000)
    # sliding: net 4 - 3 = 1 N on 2 kg
    v = traj[-1].percept.twist.linear[0]
    assert v > 0.1
    assert v == pytest.approx(0.5 * 1.0, rel=0.1)


def test_friction_bounded_by_coulomb_cone():
    sc = make_scenario("peg")
    pose = Pose([FLAT[0], FLAT[1], 2e-4])
    traj = run(state_at(pose, sc), Wrench([4.0, 2.0, 10.0], [0, 0, 0]), sc, QUIET, 500)
    for s in traj[1:]:
        f = s.contact.force
        assert np.hypot(f[0], f[1]) <= 0.3 * abs(f[2]) + 1e-9


def test_deep_penetration_is_a_fault():
    sc = make_scenario("peg")
    s = state_at(Pose([FLAT[0], FLAT[1], 6e-3]), sc)
    with pytest.raises(SimulationIntegrityError):
        plant_step(s, Wrench(), sc, QUIET, np.random.default_rng(0))


def test_non_finite_command_is_a_fault():
    sc = make_scenario("peg")
    s = state_at(Pose([0, 0, -0.01]), sc)
    bad = Wrench.__new__(Wrench)
    object.__setattr__(bad, "first", np.array([np.nan, 0, 0]))
    object.__setattr__(bad, "second", np.zeros(3))
    with pytest.raises(SimulationIntegrityError):
        plant_step(s, bad, sc, QUIET, np.random.default_rng(0))


@settings(max_examples=300, deadline=None)
@given(
    st.floats(-0.015, 0.015),
    st.floats(-0.015, 0.015),
    st.floats(-0.002, 0.004),
    st.lists(st.floats(-0.3, 0.3), min_size=3, max_size=3),
    st.lists(st.floats(-0.5, 0.5), min_size=6, max_size=6),
)
def test_normal_force_never_negative(x, y, z, rv, tw):
    sc = make_scenario("peg")
    g = sc.geometry
    pose = Pose.from_rotvec([x, y, z], rv)
    _, pen, _, _, fn, _, _ = contact_kernel(
        np.array(pose.translation), np.array(pose.orientation), np.array(tw),
        np.zeros((g.n_patches, 3)), np.zeros(3), np.array([1.0, 0, 0, 0]),
        QUIET.params_array(), g.args(),
    )
    assert np.all(fn >= 0.0)
    assert np.all(fn[pen <= 0] == 0.0)


# --- dynamics --------------------------------------------------------------------


def test_free_space_equilibrium():
    sc = make_scenario("peg")
    s0 = state_at(Pose([0, 0, -0.05]), sc)
    s1 = plant_step(s0, Wrench(), sc, QUIET, np.random.default_rng(0))
    assert s1.percept.pose == s0.percept.pose
    assert s1.percept.twist == s0.percept.twist


def test_ballistic_velocity():
    sc = make_scenario("peg")
    traj = run(state_at(Pose([0, 0, -0.05]), sc), Wrench([1.0, 0, 0], [0, 0, 0]), sc, QUIET, 100)
    assert traj[-1].percept.twist.linear[0] == pytest.approx(0.05, abs=1e-6)
    # semi-implicit Euler: x_n = a dt^2 n (n + 1) / 2
    assert traj[-1].percept.pose.translation[0] == pytest.approx(0.5 * 1e-6 * 100 * 101 / 2, abs=1e-12)


def test_time_advances_by_dt():
    sc = make_scenario("peg")
    traj = run(state_at(Pose([0, 0, -0.05]), sc), Wrench(), sc, QUIET, 10)
    assert traj[-1].percept.time == pytest.approx(0.01)


@pytest.mark.parametrize("noise", [(0.0, 0.0), (0.25, 0.025)])
def test_determinism(noise):
    sc = make_scenario("peg")
    cfg = PlantConfig(wrench_noise_sigma=noise)
    pose = Pose([0.001, 0.0, -0.002])
    push = Wrench([0.5, 0.0, 8.0], [0, 0.01, 0])
    a = run(state_at(pose, sc), push, sc, cfg, 300, np.random.default_rng(7))
    b = run(state_at(pose, sc), push, sc, cfg, 300, np.random.default_rng(7))
    for x, y in zip(a, b):
        assert np.array_equal(x.percept.pose.to_array(), y.percept.pose.to_array())
        assert np.array_equal(x.percept.external_wrench.to_vector(), y.percept.external_wrench.to_vector())


def test_measured_wrench_noise_level():
    sc = make_scenario("peg")
    cfg = PlantConfig()
    traj = run(state_at(Pose([0, 0, -0.05]), sc), Wrench(), sc, cfg, 4000, np.random.default_rng(1))
    f = np.array([s.percept.external_wrench.to_vector() for s in traj[1:]])
    np.testing.assert_allclose(f[:, :3].std(0), 0.25, rtol=0.05)
    np.testing.assert_allclose(f[:, 3:].std(0), 0.025, rtol=0.05)
    assert all(s.contact == Wrench() for s in traj[1:])


def test_first_contact_time_set_once():
    sc = make_scenario("peg")
    s = state_at(Pose([FLAT[0], FLAT[1], -0.0005]), sc)
    traj = run(s, Wrench([0, 0, 5.0], [0, 0, 0]), sc, QUIET, 400)
    times = {t.first_contact_time for t in traj if t.first_contact_time is not None}
    assert len(times) == 1
    t_first = times.pop()
    first_idx = next(i for i, t in enumerate(traj) if t.in_contact)
    assert t_first == pytest.approx(traj[first_idx].percept.time)
    assert all(t.first_contact_time is None for t in traj[:first_idx])


def test_impact_is_dissipative():
    """Dropping onto the surface with no command: the rebound carries less energy than the impact."""
    sc = make_scenario("peg")
    s = state_at(Pose([FLAT[0], FLAT[1], -0.0002]), sc, Twist([0, 0, 0.05], [0, 0, 0]))
    traj = run(s, Wrench(), sc, QUIET, 400)
    m = 2.0
    ke = np.array([0.5 * m * np.dot(t.percept.twist.linear, t.percept.twist.linear) for t in traj])
    touching = np.array([t.contact.force[2] != 0.0 for t in traj])
    start = int(np.argmax(touching))
    end = start + int(np.argmin(touching[start:]))
    assert end > start
    assert ke[end] < ke[start - 1]
    # once separated, nothing adds energy back
    assert np.all(np.diff(ke[end:]) <= 1e-12)


def test_clearance_lets_aligned_peg_reach_depth():
    sc = make_scenario("peg")
    s = state_at(Pose([0.0, 0.0, -0.001]), sc)
    traj = run(s, Wrench([0, 0, 2.0], [0, 0, 0]), sc, QUIET, 600)
    depth = np.array([insertion_depth(t, sc) for t in traj])
    assert depth.max() >= sc.depth
    before_bottom = [t for t, d in zip(traj, depth) if d < sc.depth - 1e-3]
    lateral = max(np.hypot(*t.contact.force[:2]) for t in before_bottom)
    assert lateral <= 0.25


# --- depth ---------------------------------------------------------------------


@pytest.mark.parametrize("z, expected", [(0.0, 0.0), (0.035, 0.035), (-0.001, -0.001)])
def test_insertion_depth(z, expected):
    sc = make_scenario("peg")
    assert insertion_depth(state_at(Pose([0, 0, z]), sc), sc) == pytest.approx(expected, abs=1e-15)


def test_insertion_depth_rotated_hole():
    hole = Pose.from_rotvec([1.0, 2.0, 3.0], [math.pi / 2, 0, 0])
    sc = make_scenario("peg", hole_pose=hole)
    s = state_at(hole.compose(Pose([0.002, 0.001, 0.01])), sc)
    assert insertion_depth(s, sc) == pytest.approx(0.01, abs=1e-12)
