"""Task-space geometric types: poses, twists, wrenches and percepts.

Quaternions are stored as ``(w, x, y, z)`` with the scalar part kept
non-negative so every rotation has exactly one representation.  Angular
velocities and torques are expressed in the same (spatial) frame as the
linear parts; orientations map body coordinates to the parent frame.

The numeric work lives in small ``numba`` kernels (prefixed ``q_``/``v_``)
so the compiled simulation loop and the value-type API share one
implementation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from numba import njit

# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def q_canonical(q):
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    out = np.empty(4)
    s = 1.0 / n
    if q[0] < 0.0:
        s = -s
    for i in range(4):
        out[i] = q[i] * s
    return out


@njit(cache=True)
def q_mul(a, b):
    out = np.empty(4)
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]
    return out


@njit(cache=True)
def q_conj(q):
    out = np.empty(4)
    out[0] = q[0]
    out[1] = -q[1]
    out[2] = -q[2]
    out[3] = -q[3]
    return out


@njit(cache=True)
def q_exp(rotvec):
    """Unit quaternion of the rotation vector ``rotvec`` (axis * angle)."""
    angle = math.sqrt(rotvec[0] ** 2 + rotvec[1] ** 2 + rotvec[2] ** 2)
    out = np.empty(4)
    half = 0.5 * angle
    if angle < 1e-8:
        # second-order series keeps the map smooth at the identity
        k = 0.5 - angle * angle / 48.0
        out[0] = 1.0 - angle * angle / 8.0
    else:
        k = math.sin(half) / angle
        out[0] = math.cos(half)
    out[1] = rotvec[0] * k
    out[2] = rotvec[1] * k
    out[3] = rotvec[2] * k
    return out


@njit(cache=True)
def q_log(q):
    """Rotation vector of a unit quaternion; norm <= pi for canonical input."""
    w = q[0]
    vn = math.sqrt(q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    out = np.empty(3)
    if vn < 1e-12:
        k = 2.0 / w if w != 0.0 else 0.0
    else:
        k = 2.0 * math.atan2(vn, w) / vn
    out[0] = q[1] * k
    out[1] = q[2] * k
    out[2] = q[3] * k
    return out


@njit(cache=True)
def q_rotate(q, v):
    w, x, y, z = q[0], q[1], q[2], q[3]
    # v + 2w (u x v) + 2 u x (u x v), u = (x, y, z)
    tx = 2.0 * (y * v[2] - z * v[1])
    ty = 2.0 * (z * v[0] - x * v[2])
    tz = 2.0 * (x * v[1] - y * v[0])
    out = np.empty(3)
    out[0] = v[0] + w * tx + (y * tz - z * ty)
    out[1] = v[1] + w * ty + (z * tx - x * tz)
    out[2] = v[2] + w * tz + (x * ty - y * tx)
    return out


@njit(cache=True)
def q_rotate_inv(q, v):
    return q_rotate(q_conj(q), v)


@njit(cache=True)
def q_to_matrix(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    m = np.empty((3, 3))
    m[0, 0] = 1 - 2 * (y * y + z * z)
    m[0, 1] = 2 * (x * y - w * z)
    m[0, 2] = 2 * (x * z + w * y)
    m[1, 0] = 2 * (x * y + w * z)
    m[1, 1] = 1 - 2 * (x * x + z * z)
    m[1, 2] = 2 * (y * z - w * x)
    m[2, 0] = 2 * (x * z - w * y)
    m[2, 1] = 2 * (y * z + w * x)
    m[2, 2] = 1 - 2 * (x * x + y * y)
    return m


@njit(cache=True)
def v_cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def pose_error_kernel(t_des, q_des, t_cur, q_cur):
    out = np.empty(6)
    for i in range(3):
        out[i] = t_des[i] - t_cur[i]
    same = True
    for i in range(4):
        if q_des[i] != q_cur[i]:
            same = False
    if same:
        # exact zero; the product below leaves rounding residue in the vector part
        for i in range(3):
            out[3 + i] = 0.0
        return out
    rel = q_canonical(q_mul(q_des, q_conj(q_cur)))
    r = q_log(rel)
    for i in range(3):
        out[3 + i] = r[i]
    return out


@njit(cache=True)
def integrate_twist_kernel(t, q, twist, dt):
    t_new = np.empty(3)
    for i in range(3):
        t_new[i] = t[i] + twist[i] * dt
    w = np.empty(3)
    for i in range(3):
        w[i] = twist[3 + i] * dt
    q_new = q_canonical(q_mul(q_exp(w), q))
    return t_new, q_new


@njit(cache=True)
def to_frame_kernel(frame_t, frame_q, t, q, twist, wrench):
    """Re-express a pose, twist and wrench in ``frame``."""
    d = np.empty(3)
    for i in range(3):
        d[i] = t[i] - frame_t[i]
    t_f = q_rotate_inv(frame_q, d)
    q_f = q_canonical(q_mul(q_conj(frame_q), q))
    tw = np.empty(6)
    wr = np.empty(6)
    tw[:3] = q_rotate_inv(frame_q, twist[:3])
    tw[3:] = q_rotate_inv(frame_q, twist[3:])
    wr[:3] = q_rotate_inv(frame_q, wrench[:3])
    wr[3:] = q_rotate_inv(frame_q, wrench[3:])
    return t_f, q_f, tw, wr


@njit(cache=True)
def from_frame_kernel(frame_t, frame_q, t, q, twist, wrench):
    t_w = q_rotate(frame_q, t)
    for i in range(3):
        t_w[i] += frame_t[i]
    q_w = q_canonical(q_mul(frame_q, q))
    tw = np.empty(6)
    wr = np.empty(6)
    tw[:3] = q_rotate(frame_q, twist[:3])
    tw[3:] = q_rotate(frame_q, twist[3:])
    wr[:3] = q_rotate(frame_q, wrench[:3])
    wr[3:] = q_rotate(frame_q, wrench[3:])
    return t_w, q_w, tw, wr


# ---------------------------------------------------------------------------
# value types


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=float).reshape(shape)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Pose:
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))

    def __post_init__(self):
        object.__setattr__(self, "translation", _frozen(self.translation, 3))
        q = q_canonical(np.asarray(self.orientation, dtype=float).reshape(4))
        object.__setattr__(self, "orientation", _frozen(q, 4))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_rotvec(cls, translation, rotvec) -> "Pose":
        return cls(translation, q_exp(np.asarray(rotvec, dtype=float)))

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Pose":
        """Inverse of :meth:`to_array`: ``(tx, ty, tz, qw, qx, qy, qz)``."""
        v = np.asarray(values, dtype=float)
        if v.shape != (7,):
            raise ValueError(f"pose needs 7 numbers, got {v.shape}")
        return cls(v[:3], v[3:])

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.translation, self.orientation])

    def rotation_matrix(self) -> np.ndarray:
        return q_to_matrix(self.orientation)

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: apply ``other`` expressed in this frame."""
        t = self.translation + q_rotate(self.orientation, np.array(other.translation))
        return Pose(t, q_mul(self.orientation, other.orientation))

    def inverse(self) -> "Pose":
        qi = q_conj(self.orientation)
        return Pose(-q_rotate(qi, np.array(self.translation)), qi)

    def transform_point(self, p) -> np.ndarray:
        return self.translation + q_rotate(self.orientation, np.asarray(p, dtype=float))

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(
            np.array_equal(self.translation, other.translation)
            and np.array_equal(self.orientation, other.orientation)
        )

    def __repr__(self):
        return f"Pose(t={self.translation.tolist()}, q={self.orientation.tolist()})"


@dataclass(frozen=True, eq=False)
class _Screw:
    first: np.ndarray = field(default_factory=lambda: np.zeros(3))
    second: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        a = _frozen(self.first, 3)
        b = _frozen(self.second, 3)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError(f"{type(self).__name__} components must be finite")
        object.__setattr__(self, "first", a)
        object.__setattr__(self, "second", b)

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float).reshape(6)
        return cls(v[:3], v[3:])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.first, self.second])

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return bool(np.array_equal(self.to_vector(), other.to_vector()))

    def __repr__(self):
        return f"{type(self).__name__}({self.to_vector().tolist()})"


class Twist(_Screw):
    """Linear (m/s) and angular (rad/s) velocity."""

    @property
    def linear(self) -> np.ndarray:
        return self.first

    @property
    def angular(self) -> np.ndarray:
        return self.second


class Wrench(_Screw):
    """Force (N) and torque (Nm) acting at the tool centre point."""

    @property
    def force(self) -> np.ndarray:
        return self.first

    @property
    def torque(self) -> np.ndarray:
        return self.second


@dataclass(frozen=True)
class PerceptVector:
    pose: Pose
    twist: Twist = field(default_factory=Twist)
    external_wrench: Wrench = field(default_factory=Wrench)
    time: float = 0.0
    grasped: bool = True


class TrajectorySlice(Sequence[PerceptVector]):
    """Percept samples over a window, strictly increasing in time."""

    def __init__(self, samples: Sequence[PerceptVector], period: float | None = None):
        samples = tuple(samples)
        times = np.array([s.time for s in samples])
        if np.any(np.diff(times) <= 0):
            raise ValueError("trajectory slice timestamps must be strictly increasing")
        if period is not None and len(samples) > 1:
            if not np.allclose(np.diff(times), period, rtol=0, atol=1e-9):
                raise ValueError("trajectory slice spacing differs from the controller period")
        self._samples = samples

    def __getitem__(self, i):
        return self._samples[i]

    def __len__(self):
        return len(self._samples)

    def __iter__(self) -> Iterator[PerceptVector]:
        return iter(self._samples)


# ---------------------------------------------------------------------------
# operations


def pose_error(desired: Pose, current: Pose) -> np.ndarray:
    """Translation difference and rotation vector of ``desired * current^-1``."""
    return pose_error_kernel(
        np.array(desired.translation),
        np.array(desired.orientation),
        np.array(current.translation),
        np.array(current.orientation),
    )


def integrate_twist(pose: Pose, twist: Twist, dt: float) -> Pose:
    if not dt > 0:
        raise ValueError("dt must be positive")
    t, q = integrate_twist_kernel(
        np.array(pose.translation), np.array(pose.orientation), twist.to_vector(), float(dt)
    )
    return Pose(t, q)


def to_task_frame(q: PerceptVector, frame: Pose) -> PerceptVector:
    t, o, tw, wr = to_frame_kernel(
        np.array(frame.translation),
        np.array(frame.orientation),
        np.array(q.pose.translation),
        np.array(q.pose.orientation),
        q.twist.to_vector(),
        q.external_wrench.to_vector(),
    )
    return PerceptVector(Pose(t, o), Twist.from_vector(tw), Wrench.from_vector(wr), q.time, q.grasped)


def from_task_frame(q: PerceptVector, frame: Pose) -> PerceptVector:
    t, o, tw, wr = from_frame_kernel(
        np.array(frame.translation),
        np.array(frame.orientation),
        np.array(q.pose.translation),
        np.array(q.pose.orientation),
        q.twist.to_vector(),
        q.external_wrench.to_vector(),
    )
    return PerceptVector(Pose(t, o), Twist.from_vector(tw), Wrench.from_vector(wr), q.time, q.grasped)
