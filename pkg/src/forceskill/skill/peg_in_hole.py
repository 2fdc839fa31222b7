"""The five-node peg-in-hole skill.

All poses and commands are in the task frame, the estimated hole frame
whose ``z`` axis points into the hole.

n1  approach: point-to-point motion to the tilted approach pose above the hole
n2  contact:  descend at ``s * xdot_max`` until the surface pushes back with ``f_c``
n3  search:   slide along ``+x`` pressing with ``f_c`` until the hole wall stops the peg
n4  align:    rotate upright while pressing into the wall and down
n5  insert:   push down while wiggling in a Lissajous pattern until depth ``d``
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..geometry import PerceptVector, Pose, Twist, Wrench, q_exp, q_log, q_mul, q_conj, q_canonical
from .graph import (
    Condition,
    ConditionKind,
    LearningMetric,
    ManipulationPrimitive,
    NodeContext,
    SkillGraph,
    Transition,
    execution_time,
)

NODES = ("n1", "n2", "n3", "n4", "n5")

# learned parameter domains (physical units)
SKILL_DOMAINS = {
    "f_c": (5.0, 15.0),
    "s": (0.0, 1.0),
    "a_t": (0.0, 0.005),
    "omega_t": (0.0, 3.2),
    "omega_r": (0.0, 4.5),
    "phi_init": (0.0, 0.349),
}

APPROACH_HEIGHT = 0.01  # m above the hole entry
START_HEIGHT = 0.02  # m above the approach pose
PRE_RADIUS = 0.025  # m, precondition neighbourhood of the approach pose
PRE_ANGLE = 0.4  # rad
# the approach tilt is a rotation by -phi about y, so the leading (+x) edge of the object is lowest


@dataclass(frozen=True)
class PegInHoleParams:
    d: float
    roi: float = 0.05
    xdot_max: tuple = (0.1, 1.0)
    xddot_max: tuple = (0.5, 5.0)
    phi_init: float = 0.2
    f_c: float = 10.0
    s: float = 0.5
    a_t: float = 0.0
    a_r: float = 0.0
    omega_t: float = 0.0
    omega_r: float = 0.0
    t_max: float = 15.0
    safety_force: float = 30.0
    safety_torque: float = 3.0
    lead_in: float = 0.0  # m, TCP to the leading tip edge; puts that edge on the hole axis at T_a

    def __post_init__(self):
        for name, (lo, hi) in SKILL_DOMAINS.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")
        if self.d <= 0 or self.roi <= 0 or self.t_max <= 0:
            raise ValueError("d, roi and t_max must be positive")
        if self.a_r < 0 or self.lead_in < 0:
            raise ValueError("a_r and lead_in must be non-negative")
        if min(self.xdot_max) <= 0 or min(self.xddot_max) <= 0:
            raise ValueError("velocity and acceleration limits must be positive")

    def as_array(self) -> np.ndarray:
        """Packed layout used by the compiled kernels (see ``P_*`` indices)."""
        return np.array(
            [
                self.f_c,
                self.s,
                self.a_t,
                self.omega_t,
                self.omega_r,
                self.a_r,
                self.phi_init,
                self.d,
                self.xdot_max[0],
                self.xdot_max[1],
                self.xddot_max[0],
                self.xddot_max[1],
                self.roi,
                self.t_max,
                self.safety_force,
                self.safety_torque,
                self.lead_in,
            ]
        )

    def approach_pose(self) -> Pose:
        """``T_a`` in the task frame."""
        t, q = approach_target(self.as_array())
        return Pose(t, q)

    def start_pose(self) -> Pose:
        """Nominal initial pose: upright, ``START_HEIGHT`` above the approach pose."""
        t = self.approach_pose().translation
        return Pose([t[0], t[1], t[2] - START_HEIGHT])


(P_FC, P_S, P_AT, P_WT, P_WR, P_AR, P_PHI, P_D, P_VT, P_VR, P_AT_MAX, P_AR_MAX, P_ROI, P_TMAX, P_SF, P_ST, P_LEAD) = range(17)


# ---------------------------------------------------------------------------
# point-to-point profiles


@njit(cache=True)
def trapezoid_duration(dist, v_max, a_max):
    if dist <= 0.0:
        return 0.0
    if v_max <= 0.0:
        return math.inf
    if dist < v_max * v_max / a_max:
        return 2.0 * math.sqrt(dist / a_max)
    return dist / v_max + v_max / a_max


@njit(cache=True)
def cruise_speed(dist, a_max, duration):
    """Cruise speed that covers ``dist`` in ``duration`` with ramps at ``a_max``."""
    if dist <= 0.0 or duration <= 0.0:
        return 0.0
    disc = a_max * a_max * duration * duration - 4.0 * a_max * dist
    if disc < 0.0:
        disc = 0.0
    return 0.5 * (a_max * duration - math.sqrt(disc))


@njit(cache=True)
def ramp_speed(t, vc, a_max, duration):
    if t <= 0.0 or t >= duration or vc <= 0.0:
        return 0.0
    t_acc = vc / a_max
    if t < t_acc:
        return a_max * t
    if t > duration - t_acc:
        return a_max * (duration - t)
    return vc


@njit(cache=True)
def plan_p2p(start_t, start_q, goal_t, goal_q, v_t, v_r, a_t, a_r):
    """Synchronised translation/rotation trapezoids.

    Returns ``plan = [duration, vc_t, vc_r, dir(3), axis(3)]``.
    """
    plan = np.zeros(9)
    dt_ = np.empty(3)
    for i in range(3):
        dt_[i] = goal_t[i] - start_t[i]
    dist_t = math.sqrt(dt_[0] ** 2 + dt_[1] ** 2 + dt_[2] ** 2)
    rv = q_log(q_canonical(q_mul(goal_q, q_conj(start_q))))
    dist_r = math.sqrt(rv[0] ** 2 + rv[1] ** 2 + rv[2] ** 2)
    dur = max(trapezoid_duration(dist_t, v_t, a_t), trapezoid_duration(dist_r, v_r, a_r))
    plan[0] = dur
    if math.isinf(dur):
        return plan
    plan[1] = cruise_speed(dist_t, a_t, dur)
    plan[2] = cruise_speed(dist_r, a_r, dur)
    for i in range(3):
        if dist_t > 0.0:
            plan[3 + i] = dt_[i] / dist_t
        if dist_r > 0.0:
            plan[6 + i] = rv[i] / dist_r
    return plan


@njit(cache=True)
def p2p_twist(plan, t, a_t, a_r):
    out = np.zeros(6)
    st = ramp_speed(t, plan[1], a_t, plan[0])
    sr = ramp_speed(t, plan[2], a_r, plan[0])
    for i in range(3):
        out[i] = plan[3 + i] * st
        out[3 + i] = plan[6 + i] * sr
    return out


class TrapezoidProfile:
    """Time-parameterised twist moving ``start`` to ``goal`` and stopping there."""

    def __init__(self, start: Pose, goal: Pose, v_max, a_max):
        v = np.broadcast_to(np.asarray(v_max, dtype=float), (2,))
        a = np.broadcast_to(np.asarray(a_max, dtype=float), (2,))
        if np.any(v <= 0) or np.any(a <= 0):
            raise ValueError("v_max and a_max must be positive")
        self._v, self._a = v, a
        self.plan = plan_p2p(
            np.array(start.translation),
            np.array(start.orientation),
            np.array(goal.translation),
            np.array(goal.orientation),
            v[0],
            v[1],
            a[0],
            a[1],
        )

    @property
    def duration(self) -> float:
        return float(self.plan[0])

    def __call__(self, t: float) -> Twist:
        return Twist.from_vector(p2p_twist(self.plan, float(t), self._a[0], self._a[1]))


def trapezoid_profile(start: Pose, goal: Pose, v_max, a_max) -> tuple[TrapezoidProfile, float]:
    prof = TrapezoidProfile(start, goal, v_max, a_max)
    return prof, prof.duration


# ---------------------------------------------------------------------------
# node commands


@njit(cache=True)
def approach_target(P):
    """Approach pose ``T_a`` as (translation, quaternion).

    The object is tilted by ``phi_init`` so its leading (+x) tip edge is
    lowest, and that edge sits on the hole axis ``APPROACH_HEIGHT`` above
    the entry plane.
    """
    phi = P[P_PHI]
    lead = P[P_LEAD]
    t = np.zeros(3)
    t[0] = -lead * math.cos(phi)
    t[2] = -APPROACH_HEIGHT - lead * math.sin(phi)
    rv = np.zeros(3)
    rv[1] = -phi
    return t, q_exp(rv)


@njit(cache=True)
def node_plan(node, P, entry_t, entry_q):
    """Per-node plan computed on entry (only the motion nodes n1 and n4 need one)."""
    v_t = P[P_S] * P[P_VT]
    v_r = P[P_S] * P[P_VR]
    if node == 0:
        goal_t, goal_q = approach_target(P)
        return plan_p2p(entry_t, entry_q, goal_t, goal_q, v_t, v_r, P[P_AT_MAX], P[P_AR_MAX])
    if node == 3:
        # rotate in place into the hole orientation; the feed-forward wrench keeps contact
        upright = np.zeros(4)
        upright[0] = 1.0
        return plan_p2p(entry_t, entry_q, entry_t, upright, v_t, v_r, P[P_AT_MAX], P[P_AR_MAX])
    return np.zeros(9)


@njit(cache=True)
def mp_command_kernel(node, P, t, plan):
    """Raw (pre-slew) twist and wrench of MP ``node`` (0-based) at time ``t`` in the node."""
    tw = np.zeros(6)
    wr = np.zeros(6)
    v = P[P_S] * P[P_VT]
    if node == 0:
        tw = p2p_twist(plan, t, P[P_AT_MAX], P[P_AR_MAX])
    elif node == 1:
        tw[2] = v
    elif node == 2:
        tw[0] = v
        wr[2] = P[P_FC]
    elif node == 3:
        tw = p2p_twist(plan, t, P[P_AT_MAX], P[P_AR_MAX])
        wr[0] = P[P_FC]
        wr[2] = P[P_FC]
    else:
        ph_t = 2.0 * math.pi * P[P_WT] * t
        ph_r = 2.0 * math.pi * P[P_WR] * t
        tw[0] = P[P_AT] * math.sin(ph_t)
        tw[1] = P[P_AT] * math.sin(0.75 * ph_t)
        tw[2] = v
        tw[3] = P[P_AR] * math.sin(ph_r)
        tw[4] = P[P_AR] * math.sin(0.75 * ph_r)
    return tw, wr


def mp_command(node: str, params: PegInHoleParams, x: PerceptVector, t_in_node: float, entry: Pose | None = None) -> tuple[Twist, Wrench]:
    """Command of MP ``node``; motion nodes plan from ``entry`` (default: the current pose)."""
    if node not in NODES:
        raise ValueError(f"unknown node {node!r}")
    k = NODES.index(node)
    P = params.as_array()
    e = entry if entry is not None else x.pose
    plan = node_plan(k, P, np.array(e.translation), np.array(e.orientation))
    tw, wr = mp_command_kernel(k, P, float(t_in_node), plan)
    return Twist.from_vector(tw), Wrench.from_vector(wr)


# ---------------------------------------------------------------------------
# graph


def insertion_depth_of(x: PerceptVector) -> float:
    return float(x.pose.translation[2])


def build_peg_in_hole(params: PegInHoleParams, penalty_weight: float = 1.0) -> SkillGraph:
    """Skill graph over task-frame percepts."""
    P = params.as_array()
    plans: dict[int, tuple[int, np.ndarray]] = {}

    def plan_for(k: int, ctx: NodeContext) -> np.ndarray:
        key = id(ctx.entry)
        cached = plans.get(k)
        if cached is None or cached[0] != key:
            e = ctx.entry.pose
            cached = (key, node_plan(k, P, np.array(e.translation), np.array(e.orientation)))
            plans[k] = cached
        return cached[1]

    def make_mp(k: int) -> ManipulationPrimitive:
        def twist(x, ctx):
            return mp_command_kernel(k, P, ctx.t_node, plan_for(k, ctx))[0]

        def wrench(x, ctx):
            return mp_command_kernel(k, P, ctx.t_node, plan_for(k, ctx))[1]

        return ManipulationPrimitive(NODES[k], twist, wrench)

    def duration_elapsed(k):
        return lambda x, ctx: ctx.t_node >= plan_for(k, ctx)[0]

    approach = params.approach_pose()

    def near_approach(x, ctx):
        dist = np.linalg.norm(x.pose.translation - approach.translation)
        rel = q_mul(np.array(approach.orientation), q_conj(np.array(x.pose.orientation)))
        ang = np.linalg.norm(q_log(q_canonical(rel)))
        return bool(x.grasped and dist <= PRE_RADIUS and ang <= PRE_ANGLE)

    def error(x, ctx):
        w = x.external_wrench
        return bool(
            ctx.t_skill > params.t_max
            or np.linalg.norm(x.pose.translation) > params.roi
            or np.any(np.abs(w.force) > params.safety_force)
            or np.any(np.abs(w.torque) > params.safety_torque)
        )

    fc = params.f_c
    transitions = (
        Transition("n1", "n2", Condition(ConditionKind.SUCCESS, duration_elapsed(0), "e1")),
        Transition("n2", "n3", Condition(ConditionKind.SUCCESS, lambda x, ctx: abs(x.external_wrench.force[2]) >= fc, "e2")),
        Transition("n3", "n4", Condition(ConditionKind.SUCCESS, lambda x, ctx: abs(x.external_wrench.force[0]) >= fc, "e3")),
        Transition("n4", "n5", Condition(ConditionKind.SUCCESS, duration_elapsed(3), "e4")),
    )
    return SkillGraph(
        nodes=tuple(make_mp(k) for k in range(5)),
        transitions=transitions,
        precondition=Condition(ConditionKind.PRE, near_approach, "near approach pose"),
        success_condition=Condition(ConditionKind.SUCCESS, lambda x, ctx: insertion_depth_of(x) >= params.d, "inserted"),
        error_condition=Condition(ConditionKind.ERROR, error, "error"),
        learning_metric=LearningMetric(((1.0, execution_time),)),
        context_params={"d": params.d, "roi": params.roi, "a_r": params.a_r, "t_max": params.t_max},
        learned_params=dict(SKILL_DOMAINS),
    )
