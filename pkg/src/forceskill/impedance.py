"""Cartesian impedance control with online adaptation of stiffness and feed-forward wrench.

Per control period the commanded twist is integrated into a desired pose,
the pose error ``e`` and its rate ``edot`` give the tracking error
``eps = e + kappa * edot``, and the wrench

    u = F_ff + F_d + K * e + D * edot

is applied, with ``D`` following the stiffness through a damping-ratio
design.  Stiffness and feed-forward then adapt by

    Kdot    = beta / T  * (eps * e - gamma_beta  * K)
    F_ffdot = alpha / T * (eps     - gamma_alpha * F_ff)

with rate and magnitude limits enforced around the Euler update.  All
gains are diagonal, so everything is a 6-vector (3 translational entries
followed by 3 rotational ones).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .geometry import Pose, Twist, Wrench, integrate_twist_kernel, pose_error_kernel, q_exp, q_mul, q_canonical


def _vec6(v, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.shape == (2,):
        a = np.repeat(a, 3)
    if a.shape != (6,):
        raise ValueError(f"{name} must be a 6-vector (or a translational/rotational pair)")
    a = a.copy()
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class MetaParams:
    alpha: np.ndarray
    beta: np.ndarray
    gamma_alpha: np.ndarray
    gamma_beta: np.ndarray

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma_alpha", "gamma_beta"):
            v = _vec6(getattr(self, name), name)
            if np.any(v < 0) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite and non-negative")
            object.__setattr__(self, name, v)

    @classmethod
    def shared(cls, alpha, beta, gamma_alpha, gamma_beta) -> "MetaParams":
        """Build from (translational, rotational) pairs."""
        return cls(alpha, beta, gamma_alpha, gamma_beta)

    def within(self, upper: "MetaParams") -> bool:
        return all(
            np.all(getattr(self, n) <= getattr(upper, n))
            for n in ("alpha", "beta", "gamma_alpha", "gamma_beta")
        )

    def as_array(self) -> np.ndarray:
        return np.stack([self.alpha, self.beta, self.gamma_alpha, self.gamma_beta])


@dataclass(frozen=True, eq=False)
class ControllerLimits:
    K_max: np.ndarray = (2000.0, 200.0)
    Kdot_max: np.ndarray = (5000.0, 500.0)
    F_max: np.ndarray = (10.0, 5.0)
    Fdot_max: np.ndarray = (1.0, 0.5)
    e_max: np.ndarray = (0.005, 0.017)
    xdot_max: np.ndarray = (0.1, 1.0)

    def __post_init__(self):
        for name in ("K_max", "Kdot_max", "F_max", "Fdot_max", "e_max", "xdot_max"):
            v = _vec6(getattr(self, name), name)
            if np.any(v <= 0) or not np.all(np.isfinite(v)):
                raise ValueError(f"controller limit {name} must be positive")
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.stack([self.K_max, self.Kdot_max, self.F_max, self.Fdot_max, self.e_max, self.xdot_max])


@dataclass(frozen=True)
class ControllerGains:
    kappa: float = 0.01
    damping_ratio: float = 0.7
    T: float = 1e-3

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not 0 < self.damping_ratio <= 1:
            raise ValueError("damping ratio must lie in (0, 1]")
        if not self.T > 0:
            raise ValueError("sample time must be positive")


@dataclass(frozen=True, eq=False)
class ControllerState:
    K: np.ndarray
    F_ff: Wrench = field(default_factory=Wrench)
    desired_pose: Pose = field(default_factory=Pose)

    def __post_init__(self):
        K = _vec6(self.K, "K")
        if np.any(K < 0):
            raise ValueError("stiffness must be non-negative")
        object.__setattr__(self, "K", K)

    @classmethod
    def initial(cls, limits: ControllerLimits, pose: Pose, stiffness_fraction: float = 0.25) -> "ControllerState":
        return cls(stiffness_fraction * limits.K_max, Wrench(), pose)


def meta_bounds(limits: ControllerLimits, T: float) -> MetaParams:
    """Largest learning rates and forgetting factors that keep adaptation within the rate limits."""
    if np.any(limits.e_max == 0):
        raise ValueError("e_max must be non-zero")
    beta = limits.Kdot_max * T / limits.e_max**2
    gamma_beta = limits.Kdot_max / (beta * limits.K_max)
    alpha = limits.Fdot_max * T / limits.e_max
    gamma_alpha = limits.Fdot_max / (alpha * limits.F_max)
    return MetaParams(alpha, beta, gamma_alpha, gamma_beta)


def tracking_error(e, edot, kappa: float) -> np.ndarray:
    return np.asarray(e, dtype=float) + kappa * np.asarray(edot, dtype=float)


def damping_for(K, inertia, zeta: float) -> np.ndarray:
    return 2.0 * zeta * np.sqrt(np.asarray(K, dtype=float) * np.asarray(inertia, dtype=float))


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def adapt_kernel(K, F_ff, eps, e, alpha, beta, gamma_alpha, gamma_beta, K_max, Kdot_max, F_max, Fdot_max, T):
    K_new = np.empty(6)
    F_new = np.empty(6)
    for i in range(6):
        kdot = beta[i] / T * (eps[i] * e[i] - gamma_beta[i] * K[i])
        kdot = min(Kdot_max[i], max(-Kdot_max[i], kdot))
        K_new[i] = min(K_max[i], max(0.0, K[i] + kdot * T))
        fdot = alpha[i] / T * (eps[i] - gamma_alpha[i] * F_ff[i])
        fdot = min(Fdot_max[i], max(-Fdot_max[i], fdot))
        F_new[i] = min(F_max[i], max(-F_max[i], F_ff[i] + fdot * T))
    return K_new, F_new


@njit(cache=True)
def clamp_desired_kernel(pos, quat, des_t, des_q, e_max):
    """Pose error with each component clamped to ``e_max``; the desired pose is pulled along."""
    e = pose_error_kernel(des_t, des_q, pos, quat)
    clamped = False
    for i in range(6):
        if e[i] > e_max[i]:
            e[i] = e_max[i]
            clamped = True
        elif e[i] < -e_max[i]:
            e[i] = -e_max[i]
            clamped = True
    if clamped:
        new_t = np.empty(3)
        for i in range(3):
            new_t[i] = pos[i] + e[i]
        new_q = q_canonical(q_mul(q_exp(e[3:]), quat))
        return e, new_t, new_q
    return e, des_t.copy(), des_q.copy()


@njit(cache=True)
def controller_step_kernel(
    pos, quat, twist, des_t, des_q, cmd_twist, F_d, K, F_ff, meta, lim, kappa, zeta, T, inertia
):
    """One control period.

    ``meta`` rows: alpha, beta, gamma_alpha, gamma_beta.  ``lim`` rows:
    K_max, Kdot_max, F_max, Fdot_max, e_max, xdot_max.  The desired pose
    is first advanced by the commanded twist, then the clamped error drives
    the wrench, and finally the gains adapt.

    Returns ``(u, des_t, des_q, K, F_ff)``.
    """
    des_t, des_q = integrate_twist_kernel(des_t, des_q, cmd_twist, T)
    e, des_t, des_q = clamp_desired_kernel(pos, quat, des_t, des_q, lim[4])
    u = np.empty(6)
    eps = np.empty(6)
    for i in range(6):
        edot = cmd_twist[i] - twist[i]
        eps[i] = e[i] + kappa * edot
        d = 2.0 * zeta * math.sqrt(K[i] * inertia[i])
        u[i] = F_ff[i] + F_d[i] + K[i] * e[i] + d * edot
    K_new, F_new = adapt_kernel(
        K, F_ff, eps, e, meta[0], meta[1], meta[2], meta[3], lim[0], lim[1], lim[2], lim[3], T
    )
    return u, des_t, des_q, K_new, F_new


# ---------------------------------------------------------------------------
# value-level API


def adapt_step(
    state: ControllerState, eps, e, meta: MetaParams, limits: ControllerLimits, T: float
) -> ControllerState:
    """Forward-Euler adaptation of stiffness and feed-forward over one period."""
    K, F = adapt_kernel(
        np.array(state.K),
        state.F_ff.to_vector(),
        np.asarray(eps, dtype=float),
        np.asarray(e, dtype=float),
        np.array(meta.alpha),
        np.array(meta.beta),
        np.array(meta.gamma_alpha),
        np.array(meta.gamma_beta),
        np.array(limits.K_max),
        np.array(limits.Kdot_max),
        np.array(limits.F_max),
        np.array(limits.Fdot_max),
        float(T),
    )
    return replace(state, K=K, F_ff=Wrench.from_vector(F))


def control_wrench(state: ControllerState, e, edot, F_d: Wrench, D) -> Wrench:
    """Restoring impedance wrench: positive error pushes toward the desired pose."""
    u = (
        state.F_ff.to_vector()
        + F_d.to_vector()
        + state.K * np.asarray(e, dtype=float)
        + np.asarray(D, dtype=float) * np.asarray(edot, dtype=float)
    )
    return Wrench.from_vector(u)


def feedforward_magnitude(state: ControllerState, F_d: Wrench) -> np.ndarray:
    """Componentwise magnitude of the open-loop part ``F_ff + F_d`` (for safety monitoring)."""
    return np.abs(state.F_ff.to_vector() + F_d.to_vector())


class ImpedanceController:
    """Stateful wrapper stepping the control law once per period."""

    def __init__(
        self,
        meta: MetaParams,
        limits: ControllerLimits,
        gains: ControllerGains,
        inertia,
        initial: ControllerState,
    ):
        self.meta = meta
        self.limits = limits
        self.gains = gains
        self.inertia = np.asarray(inertia, dtype=float)
        self.state = initial
        self._meta = meta.as_array()
        self._lim = limits.as_array()

    def step(self, pose: Pose, twist: Twist, cmd_twist: Twist, F_d: Wrench) -> Wrench:
        s = self.state
        u, des_t, des_q, K, F = controller_step_kernel(
            np.array(pose.translation),
            np.array(pose.orientation),
            twist.to_vector(),
            np.array(s.desired_pose.translation),
            np.array(s.desired_pose.orientation),
            cmd_twist.to_vector(),
            F_d.to_vector(),
            np.array(s.K),
            s.F_ff.to_vector(),
            self._meta,
            self._lim,
            self.gains.kappa,
            self.gains.damping_ratio,
            self.gains.T,
            self.inertia,
        )
        self.state = ControllerState(K, Wrench.from_vector(F), Pose(des_t, des_q))
        return Wrench.from_vector(u)
