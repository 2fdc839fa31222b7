"""One execution of the peg-in-hole skill: skill -> impedance controller -> plant.

``run_rollout`` is the production path, a single compiled loop.  It calls
the same kernels as the value-level API, and ``reference_rollout`` runs
the generic :class:`~forceskill.skill.graph.SkillRuntime`, the
:class:`~forceskill.impedance.ImpedanceController` and
:func:`~forceskill.plant.plant_step` in plain Python so the two can be
checked against each other.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .geometry import Pose, Twist, Wrench, q_canonical, q_conj, q_log, q_mul, q_rotate, to_frame_kernel, to_task_frame
from .impedance import ControllerGains, ControllerLimits, ControllerState, ImpedanceController, MetaParams, controller_step_kernel
from .plant import (
    CONTACT_FORCE_THRESHOLD,
    MAX_PENETRATION,
    PlantConfig,
    PlantState,
    ScenarioSpec,
    SimulationIntegrityError,
    force_norm,
    plant_step,
    plant_step_kernel,
    write_trajectory_csv,
)
from .skill.graph import RunOutcome, SkillRuntime, Status, metric_cost, slew_kernel
from .skill.peg_in_hole import (
    NODES,
    P_D,
    P_FC,
    P_ROI,
    P_SF,
    P_ST,
    P_TMAX,
    PRE_ANGLE,
    PRE_RADIUS,
    PegInHoleParams,
    approach_target,
    build_peg_in_hole,
    mp_command_kernel,
    node_plan,
)

STATUS_RUNNING, STATUS_SUCCESS, STATUS_FAILURE, STATUS_FAULT = 0, 1, 2, 3
REASONS = ("", "success", "error", "precondition", "penetration", "non-finite", "timeout")
LOG_COLUMNS = 21 + 1 + 12  # trajectory columns, node index, K, F_ff


@dataclass(frozen=True)
class SkillLimits:
    """Slew limits applied to the skill's commands at node switches."""

    twist_slope: tuple = (0.5, 5.0)  # m/s^2, rad/s^2
    wrench_slope: tuple = (100.0, 10.0)  # N/s, Nm/s

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.repeat(np.asarray(self.twist_slope, float), 3), np.repeat(np.asarray(self.wrench_slope, float), 3)


@dataclass(frozen=True)
class RolloutSetup:
    scenario: ScenarioSpec
    skill: PegInHoleParams
    meta: MetaParams
    plant: PlantConfig = field(default_factory=PlantConfig)
    limits: ControllerLimits = field(default_factory=ControllerLimits)
    gains: ControllerGains = field(default_factory=ControllerGains)
    skill_limits: SkillLimits = field(default_factory=SkillLimits)
    initial_stiffness: float = 0.25  # fraction of K_max

    def task_frame(self, offset_xy=(0.0, 0.0)) -> Pose:
        """Estimated hole pose: the true hole shifted in its own x/y plane."""
        h = self.scenario.hole_pose
        return h.compose(Pose([offset_xy[0], offset_xy[1], 0.0]))

    @property
    def n_steps(self) -> int:
        return int(round(self.skill.t_max / self.gains.T)) + 2


@dataclass
class RolloutResult:
    status: int
    reason: str
    t_end: float
    t_first_contact: float | None
    depth: float
    node_times: list
    cost: float
    success: int
    log: np.ndarray | None = None

    @property
    def outcome(self) -> RunOutcome:
        return RunOutcome(self.status == STATUS_SUCCESS, self.t_end, self.t_first_contact, self.depth, float("nan"))


@njit(cache=True)
def _percept_in_task(task_t, task_q, pos, quat, meas):
    zero = np.zeros(6)
    tt, tq, _, tw = to_frame_kernel(task_t, task_q, pos, quat, zero, meas)
    return tt, tq, tw


@njit(cache=True)
def rollout_kernel(
    P,
    start_t,
    start_q,
    task_t,
    task_q,
    hole_t,
    hole_q,
    inertia,
    plant_params,
    noise_scale,
    noise,
    geom_args,
    n_patches,
    meta,
    lim,
    kappa,
    zeta,
    T,
    K0,
    twist_slew,
    wrench_slew,
    log,
):
    """Run the skill to termination.

    Returns ``(status, reason, t_end, t_first_contact, depth, node_times, n_logged)``.
    ``t_first_contact`` is ``-1`` when there was none.
    """
    pos = start_t.copy()
    quat = start_q.copy()
    twist = np.zeros(6)
    anchors = np.zeros((n_patches, 3))
    meas = np.zeros(6)
    des_t = start_t.copy()
    des_q = start_q.copy()
    K = K0.copy()
    F = np.zeros(6)
    prev_tw = np.zeros(6)
    prev_wr = np.zeros(6)
    node_times = np.full(5, -1.0)
    t = 0.0
    first = -1.0
    contact = 0.0
    n_steps = noise.shape[0]
    do_log = log.shape[0] > 0

    p_t, p_q, w_t = _percept_in_task(task_t, task_q, pos, quat, meas)
    depth = p_t[2]
    # precondition: near the approach pose, grasped
    node = 0
    plan = node_plan(0, P, p_t, p_q)
    node_times[0] = 0.0
    t_entry = 0.0
    status = STATUS_FAILURE
    reason = 6
    goal_t, goal_q = approach_target(P)
    from_goal = math.sqrt((p_t[0] - goal_t[0]) ** 2 + (p_t[1] - goal_t[1]) ** 2 + (p_t[2] - goal_t[2]) ** 2)
    rv = q_log(q_canonical(q_mul(goal_q, q_conj(p_q))))
    angle = math.sqrt(rv[0] ** 2 + rv[1] ** 2 + rv[2] ** 2)
    if from_goal > PRE_RADIUS or angle > PRE_ANGLE:
        return STATUS_FAILURE, 3, t, first, depth, node_times, 0
    for k in range(n_steps):
        p_t, p_q, w_t = _percept_in_task(task_t, task_q, pos, quat, meas)
        depth = p_t[2]
        if do_log:
            row = log[k]
            row[0] = t
            row[1:4] = pos
            row[4:8] = quat
            row[8:14] = twist
            row[14:20] = meas
            row[20] = contact
            row[21] = node
            row[22:28] = K
            row[28:34] = F
        # error condition first
        err = t > P[P_TMAX] or math.sqrt(p_t[0] ** 2 + p_t[1] ** 2 + p_t[2] ** 2) > P[P_ROI]
        for i in range(3):
            if abs(w_t[i]) > P[P_SF] or abs(w_t[3 + i]) > P[P_ST]:
                err = True
        if err:
            return STATUS_FAILURE, 2, t, first, depth, node_times, k + 1
        if node == 4 and depth >= P[P_D]:
            return STATUS_SUCCESS, 1, t, first, depth, node_times, k + 1
        t_node = t - t_entry
        fire = False
        if node == 0 or node == 3:
            fire = t_node >= plan[0]
        elif node == 1:
            fire = abs(w_t[2]) >= P[P_FC]
        elif node == 2:
            fire = abs(w_t[0]) >= P[P_FC]
        if fire:
            node += 1
            node_times[node] = t
            t_entry = t
            t_node = 0.0
            plan = node_plan(node, P, p_t, p_q)
        tw, wr = mp_command_kernel(node, P, t_node, plan)
        prev_tw = slew_kernel(prev_tw, tw, twist_slew)
        prev_wr = slew_kernel(prev_wr, wr, wrench_slew)
        cmd = np.empty(6)
        fd = np.empty(6)
        cmd[:3] = q_rotate(task_q, prev_tw[:3])
        cmd[3:] = q_rotate(task_q, prev_tw[3:])
        fd[:3] = q_rotate(task_q, prev_wr[:3])
        fd[3:] = q_rotate(task_q, prev_wr[3:])
        u, des_t, des_q, K, F = controller_step_kernel(
            pos, quat, twist, des_t, des_q, cmd, fd, K, F, meta, lim, kappa, zeta, T, inertia
        )
        pos, quat, twist, anchors, meas, w, max_pen = plant_step_kernel(
            pos, quat, twist, anchors, u, noise[k], inertia, hole_t, hole_q, plant_params, noise_scale, geom_args
        )
        if max_pen > MAX_PENETRATION:
            return STATUS_FAULT, 4, t, first, depth, node_times, k + 1
        finite = True
        for i in range(6):
            if not math.isfinite(twist[i]):
                finite = False
        for i in range(3):
            if not math.isfinite(pos[i]):
                finite = False
        if not finite:
            return STATUS_FAULT, 5, t, first, depth, node_times, k + 1
        t = t + T
        contact = 1.0 if force_norm(w) > CONTACT_FORCE_THRESHOLD else 0.0
        if first < 0.0 and contact > 0.0:
            first = t
    return status, reason, t, first, depth, node_times, n_steps


def _finish(setup: RolloutSetup, status, reason_code, t_end, first, depth, node_times, penalty_weight, log=None):
    success = status == STATUS_SUCCESS
    outcome = RunOutcome(
        success,
        float(t_end),
        None if first < 0 else float(first),
        float(depth),
        setup.scenario.depth,
        setup.skill.t_max,
    )
    if success and outcome.t_first_contact is None:
        raise SimulationIntegrityError("insertion succeeded without any recorded contact")
    if status == STATUS_FAULT:
        raise SimulationIntegrityError(f"simulation integrity fault ({REASONS[reason_code]}) at t={t_end:.3f} s")
    cost, r = metric_cost(None, outcome, penalty_weight)
    return RolloutResult(
        int(status),
        REASONS[reason_code],
        float(t_end),
        outcome.t_first_contact,
        float(depth),
        [float(v) for v in node_times],
        cost,
        r,
        log,
    )


def run_rollout(
    setup: RolloutSetup,
    offset_xy=(0.0, 0.0),
    rng: np.random.Generator | None = None,
    penalty_weight: float = 1.0,
    record: bool = False,
    start: Pose | None = None,
) -> RolloutResult:
    """Execute the skill once against the true hole with the task frame shifted by ``offset_xy``.

    Raises :class:`SimulationIntegrityError` on deep penetration or a
    non-finite state.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    n = setup.n_steps
    noise = rng.standard_normal((n, 6))
    task = setup.task_frame(offset_xy)
    start_pose = task.compose(start if start is not None else setup.skill.start_pose())
    g = setup.scenario.geometry
    log = np.zeros((n, LOG_COLUMNS)) if record else np.zeros((0, LOG_COLUMNS))
    status, reason, t_end, first, depth, node_times, n_logged = rollout_kernel(
        setup.skill.as_array(),
        np.array(start_pose.translation),
        np.array(start_pose.orientation),
        np.array(task.translation),
        np.array(task.orientation),
        np.array(setup.scenario.hole_pose.translation),
        np.array(setup.scenario.hole_pose.orientation),
        setup.plant.inertia,
        setup.plant.params_array(),
        setup.plant.noise_scale(),
        noise,
        g.args(),
        g.n_patches,
        setup.meta.as_array(),
        setup.limits.as_array(),
        setup.gains.kappa,
        setup.gains.damping_ratio,
        setup.gains.T,
        setup.initial_stiffness * setup.limits.K_max,
        *(a * setup.gains.T for a in setup.skill_limits.arrays()),
        log,
    )
    return _finish(
        setup, status, reason, t_end, first, depth, node_times, penalty_weight, log[:n_logged] if record else None
    )


def reference_rollout(
    setup: RolloutSetup,
    offset_xy=(0.0, 0.0),
    rng: np.random.Generator | None = None,
    penalty_weight: float = 1.0,
) -> RolloutResult:
    """Same run as :func:`run_rollout`, assembled from the value-level modules (slow)."""
    rng = rng if rng is not None else np.random.default_rng(0)
    task = setup.task_frame(offset_xy)
    start_pose = task.compose(setup.skill.start_pose())
    graph = build_peg_in_hole(setup.skill)
    tw_slope, wr_slope = setup.skill_limits.arrays()
    runtime = SkillRuntime(graph, setup.gains.T, tw_slope, wr_slope)
    ctrl = ImpedanceController(
        setup.meta,
        setup.limits,
        setup.gains,
        setup.plant.inertia,
        ControllerState(setup.initial_stiffness * setup.limits.K_max, Wrench(), start_pose),
    )
    state = PlantState.at_rest(start_pose, setup.scenario)
    x = to_task_frame(state.percept, task)
    depth = float(x.pose.translation[2])
    first = -1.0
    if not runtime.start(x):
        return _finish(setup, STATUS_FAILURE, 3, 0.0, first, depth, [0.0, -1, -1, -1, -1], penalty_weight)
    tq = np.array(task.orientation)
    status, reason = STATUS_FAILURE, 6
    for _ in range(setup.n_steps):
        x = to_task_frame(state.percept, task)
        depth = float(x.pose.translation[2])
        out = runtime.step(x)
        if out.status is Status.SUCCESS:
            status, reason = STATUS_SUCCESS, 1
            break
        if out.status is Status.FAILURE:
            status, reason = STATUS_FAILURE, 2
            break
        cmd = Twist(q_rotate(tq, np.array(out.twist.linear)), q_rotate(tq, np.array(out.twist.angular)))
        fd = Wrench(q_rotate(tq, np.array(out.wrench.force)), q_rotate(tq, np.array(out.wrench.torque)))
        u = ctrl.step(state.percept.pose, state.percept.twist, cmd, fd)
        state = plant_step(state, u, setup.scenario, setup.plant, rng)
    node_times = [-1.0] * 5
    for t, name in runtime.timeline:
        node_times[NODES.index(name)] = t
    t_end = x.time
    first = state.first_contact_time if state.first_contact_time is not None else -1.0
    return _finish(setup, status, reason, t_end, first, depth, node_times, penalty_weight)


LOG_EXTRA = ("node",) + tuple(f"K_{a}" for a in ("x", "y", "z", "rx", "ry", "rz")) + tuple(
    f"Fff_{a}" for a in ("x", "y", "z", "rx", "ry", "rz")
)


def write_log_csv(path, log: np.ndarray) -> None:
    """Trajectory CSV of a recorded rollout, with the active node and adapted gains per step."""
    log = np.asarray(log, dtype=float)
    extra = {"node": [NODES[int(v)] if v >= 0 else "" for v in log[:, 21]]}
    for k, name in enumerate(LOG_EXTRA[1:]):
        extra[name] = [repr(float(v)) for v in log[:, 22 + k]]
    write_trajectory_csv(path, log[:, :21], extra)
