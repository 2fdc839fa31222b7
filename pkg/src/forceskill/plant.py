"""Lumped Cartesian plant with penalty contact for the peg-in-hole tasks.

The held object is a prism (cylinder, triangle or plate cross-section)
whose tool centre point sits at the centre of its tip face.  The hole
block is the half-space ``z > 0`` of the hole frame minus a bore of the
same cross-section enlarged by the clearance, closed at ``z = depth``.
The hole frame's ``z`` axis points *into* the hole.

Contact is resolved with probe points:

* points on the peg's tip perimeter and chamfer ring are tested against
  the block (top plane, bore walls, bore bottom);
* points on the hole's entry rim are tested against the peg's chamfered
  prism.

Probes touching the same surface feature form one contact patch.  A
patch produces a single normal force ``k * max_penetration + c * rate``
at the penetration-weighted centroid, so the contact stiffness does not
depend on how finely the perimeter is sampled.  Friction uses an elastic
anchor per patch that sticks until the Coulomb cap ``mu * F_n`` is hit.
"""
from __future__ import annotations

import csv

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from numba import njit

from .geometry import (
    PerceptVector,
    Pose,
    Twist,
    Wrench,
    integrate_twist_kernel,
    q_conj,
    q_mul,
    q_rotate,
    q_to_matrix,
    q_rotate_inv,
    v_cross,
)

CONTACT_FORCE_THRESHOLD = 0.5  # N, first-contact detection
MAX_PENETRATION = 5e-3  # m, beyond this the simulation is considered broken


class SimulationIntegrityError(RuntimeError):
    """Raised when the plant state becomes non-finite or interpenetrates deeply."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class PlantConfig:
    effective_mass: tuple = (2.0, 2.0, 2.0)
    effective_inertia: tuple = (0.05, 0.05, 0.05)
    contact_stiffness: float = 5e4
    contact_damping: float = 200.0
    friction_coefficient: float = 0.3
    tangential_stiffness: float = 5e4
    wrench_noise_sigma: tuple = (0.25, 0.025)
    step_dt: float = 1e-3

    def __post_init__(self):
        positive = (
            *self.effective_mass,
            *self.effective_inertia,
            self.contact_stiffness,
            self.contact_damping,
            self.friction_coefficient,
            self.tangential_stiffness,
            self.step_dt,
        )
        if min(positive) <= 0:
            raise ValueError("plant parameters must be positive")
        if min(self.wrench_noise_sigma) < 0:
            raise ValueError("noise sigma must be non-negative")

    @property
    def inertia(self) -> np.ndarray:
        """Diagonal of the 6x6 Cartesian inertia."""
        return np.array([*self.effective_mass, *self.effective_inertia], dtype=float)

    def params_array(self) -> np.ndarray:
        return np.array(
            [
                self.contact_stiffness,
                self.contact_damping,
                self.friction_coefficient,
                self.tangential_stiffness,
                self.step_dt,
            ]
        )

    def noise_scale(self) -> np.ndarray:
        f, t = self.wrench_noise_sigma
        return np.array([f, f, f, t, t, t], dtype=float)


@dataclass(frozen=True)
class CrossSection:
    """Peg cross-section: ``cylinder`` (radius), ``triangle`` (side) or ``plate`` (width, thickness)."""

    shape: str
    dims: tuple

    def __post_init__(self):
        n = {"cylinder": 1, "triangle": 1, "plate": 2}.get(self.shape)
        if n is None:
            raise ValueError(f"unknown cross-section {self.shape!r}")
        if len(self.dims) != n or min(self.dims) <= 0:
            raise ValueError(f"bad dimensions {self.dims} for {self.shape}")

    @property
    def is_circle(self) -> bool:
        return self.shape == "cylinder"

    def polygon(self, offset: float = 0.0) -> np.ndarray:
        """CCW vertices of the cross-section with every edge pushed out by ``offset``."""
        if self.shape == "triangle":
            side = self.dims[0]
            r_in = side / (2 * math.sqrt(3))
            scale = (r_in + offset) / r_in
            ang = np.deg2rad([90.0, 210.0, 330.0])
            r_circ = side / math.sqrt(3)
            return scale * r_circ * np.column_stack([np.cos(ang), np.sin(ang)])
        if self.shape == "plate":
            w, t = self.dims
            hx, hy = w / 2 + offset, t / 2 + offset
            return np.array([[hx, -hy], [hx, hy], [-hx, hy], [-hx, -hy]])
        raise ValueError("cylinders have no polygon")

    def bounding_radius(self) -> float:
        if self.is_circle:
            return self.dims[0]
        return float(np.max(np.linalg.norm(self.polygon(), axis=1)))

    def inradius(self) -> float:
        if self.shape == "cylinder":
            return self.dims[0]
        if self.shape == "triangle":
            return self.dims[0] / (2 * math.sqrt(3))
        return min(self.dims) / 2


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    hole_pose: Pose
    depth: float
    clearance: float
    chamfer: float
    cross_section: CrossSection
    roi_radius: float = 0.05
    max_rot_amplitude: float = 0.0
    peg_length: float = 0.06
    lead_in: float = 0.0  # distance from the tip centre to the leading (+x) tip edge

    def __post_init__(self):
        if self.clearance <= 0 or self.depth <= 0 or self.chamfer < 0:
            raise ValueError("need clearance > 0, depth > 0 and chamfer >= 0")
        if self.chamfer >= self.cross_section.inradius():
            raise ValueError("chamfer larger than the cross-section")
        if self.peg_length <= self.depth:
            raise ValueError("peg shorter than the hole depth")

    @cached_property
    def geometry(self) -> "ContactGeometry":
        return ContactGeometry.build(self)


SCENARIO_DEFAULTS = {
    "puzzle": dict(
        depth=0.005,
        clearance=1e-4,
        chamfer=0.0,
        cross_section=CrossSection("triangle", (0.075,)),
        max_rot_amplitude=0.09,
        peg_length=0.03,
        lead_in=0.075 / 2,
    ),
    "key": dict(
        depth=0.0023,
        clearance=1e-4,
        chamfer=3e-4,
        cross_section=CrossSection("plate", (0.008, 0.002)),
        max_rot_amplitude=0.0175,
        peg_length=0.03,
    ),
    "peg": dict(
        depth=0.035,
        clearance=5e-5,
        chamfer=5e-4,
        cross_section=CrossSection("cylinder", (0.01,)),
        max_rot_amplitude=0.035,
        peg_length=0.06,
        lead_in=0.0095,
    ),
}


def make_scenario(kind: str, hole_pose: Pose | None = None, **overrides) -> ScenarioSpec:
    """Task geometry for one of the three insertion variants."""
    if kind not in SCENARIO_DEFAULTS:
        raise ValueError(f"unknown scenario kind {kind!r}; expected one of {sorted(SCENARIO_DEFAULTS)}")
    values = dict(SCENARIO_DEFAULTS[kind])
    values.update(overrides)
    return ScenarioSpec(kind=kind, hole_pose=hole_pose or Pose.identity(), **values)


# ---------------------------------------------------------------------------
# probe geometry


def _polygon_normals(verts: np.ndarray) -> np.ndarray:
    d = np.roll(verts, -1, axis=0) - verts
    n = np.column_stack([d[:, 1], -d[:, 0]])
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def _perimeter_points(verts: np.ndarray, per_edge: int) -> np.ndarray:
    pts = []
    for i in range(len(verts)):
        a, b = verts[i], verts[(i + 1) % len(verts)]
        for k in range(per_edge):
            pts.append(a + (b - a) * k / per_edge)
    return np.array(pts)


def _circle_points(radius: float, n: int) -> np.ndarray:
    ang = 2 * np.pi * np.arange(n) / n
    return radius * np.column_stack([np.cos(ang), np.sin(ang)])


@dataclass(frozen=True)
class ContactGeometry:
    """Arrays consumed by the compiled contact kernel."""

    is_circle: bool
    peg_radius: float
    hole_radius: float
    peg_verts: np.ndarray
    peg_normals: np.ndarray
    hole_verts: np.ndarray
    hole_normals: np.ndarray
    peg_probes: np.ndarray  # body frame, (n, 3)
    rim_probes: np.ndarray  # hole frame, (m, 3)
    chamfer: float
    depth: float
    peg_length: float
    bound_radius: float
    n_patches: int

    @classmethod
    def build(cls, sc: ScenarioSpec, ring_points: int = 48, rim_points: int = 64, per_edge: int = 8):
        cs, ch = sc.cross_section, sc.chamfer
        if cs.is_circle:
            r = cs.dims[0]
            R = r + sc.clearance
            empty = np.zeros((1, 2))
            peg_v = peg_n = hole_v = hole_n = empty
            tip = _circle_points(r - ch, ring_points)
            top = _circle_points(r, ring_points)
            rim = _circle_points(R, rim_points)
            n_hole_edges = n_peg_edges = 1
        else:
            r = R = 0.0
            peg_v = cs.polygon()
            peg_n = _polygon_normals(peg_v)
            hole_v = cs.polygon(sc.clearance)
            hole_n = _polygon_normals(hole_v)
            tip = _perimeter_points(cs.polygon(-ch), per_edge)
            top = _perimeter_points(peg_v, per_edge)
            rim = _perimeter_points(hole_v, 2 * per_edge)
            n_hole_edges = n_peg_edges = len(peg_v)
        rings = [np.column_stack([tip, np.zeros(len(tip))])]
        if ch > 0:
            rings.append(np.column_stack([top, np.full(len(top), -ch)]))
        peg_probes = np.vstack(rings)
        rim_probes = np.column_stack([rim, np.zeros(len(rim))])
        # patch layout: top plane, bottom, hole walls..., peg bottom face, peg sides..., peg chamfers...
        n_patches = 2 + n_hole_edges + 1 + 2 * n_peg_edges
        return cls(
            is_circle=cs.is_circle,
            peg_radius=r,
            hole_radius=R,
            peg_verts=np.ascontiguousarray(peg_v, dtype=float),
            peg_normals=np.ascontiguousarray(peg_n, dtype=float),
            hole_verts=np.ascontiguousarray(hole_v, dtype=float),
            hole_normals=np.ascontiguousarray(hole_n, dtype=float),
            peg_probes=np.ascontiguousarray(peg_probes, dtype=float),
            rim_probes=np.ascontiguousarray(rim_probes, dtype=float),
            chamfer=float(ch),
            depth=float(sc.depth),
            peg_length=float(sc.peg_length),
            bound_radius=cs.bounding_radius(),
            n_patches=n_patches,
        )

    def args(self) -> tuple:
        """Positional geometry arguments of the compiled kernels."""
        return (
            self.is_circle,
            self.peg_radius,
            self.hole_radius,
            self.peg_verts,
            self.peg_normals,
            self.hole_verts,
            self.hole_normals,
            self.peg_probes,
            self.rim_probes,
            self.chamfer,
            self.depth,
            self.peg_length,
            self.bound_radius,
        )


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def force_norm(w):
    return math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])


@njit(cache=True)
def _poly_sdf(px, py, verts, normals):
    """Signed distance to a convex CCW polygon, its gradient and the nearest edge."""
    n = verts.shape[0]
    best = -1e300
    bi = 0
    for i in range(n):
        d = (px - verts[i, 0]) * normals[i, 0] + (py - verts[i, 1]) * normals[i, 1]
        if d > best:
            best = d
            bi = i
    if best <= 0.0:
        return best, normals[bi, 0], normals[bi, 1], bi
    dmin = 1e300
    gx = 0.0
    gy = 0.0
    for i in range(n):
        ax, ay = verts[i, 0], verts[i, 1]
        j = (i + 1) % n
        ex, ey = verts[j, 0] - ax, verts[j, 1] - ay
        t = ((px - ax) * ex + (py - ay) * ey) / (ex * ex + ey * ey)
        t = min(1.0, max(0.0, t))
        cx, cy = ax + t * ex - px, ay + t * ey - py
        d = math.sqrt(cx * cx + cy * cy)
        if d < dmin:
            dmin = d
            bi = i
            gx = -cx
            gy = -cy
    if dmin > 0.0:
        gx /= dmin
        gy /= dmin
    return dmin, gx, gy, bi


@njit(cache=True)
def _section_sdf(px, py, is_circle, radius, verts, normals):
    if is_circle:
        rho = math.sqrt(px * px + py * py)
        if rho > 0.0:
            return rho - radius, px / rho, py / rho, 0
        return -radius, 1.0, 0.0, 0
    return _poly_sdf(px, py, verts, normals)


@njit(cache=True)
def contact_patches(
    pos,
    quat,
    is_circle,
    peg_radius,
    hole_radius,
    peg_verts,
    peg_normals,
    hole_verts,
    hole_normals,
    peg_probes,
    rim_probes,
    chamfer,
    depth,
    peg_length,
    bound_radius,
    n_patches,
):
    """Per-patch max penetration, centroid and unit normal (force direction on the peg).

    All quantities live in the hole frame.
    """
    pen = np.zeros(n_patches)
    wsum = np.zeros(n_patches)
    pt = np.zeros((n_patches, 3))
    nrm = np.zeros((n_patches, 3))
    max_pen = 0.0
    if pos[2] + bound_radius < 0.0:
        return pen, pt, nrm, max_pen

    n_hole = hole_verts.shape[0] if not is_circle else 1
    n_peg = peg_verts.shape[0] if not is_circle else 1
    wall0 = 2
    face = 2 + n_hole
    side0 = face + 1
    cham0 = side0 + n_peg

    R = q_to_matrix(quat)
    # peg perimeter probes against the block
    for i in range(peg_probes.shape[0]):
        bx, by, bz = peg_probes[i, 0], peg_probes[i, 1], peg_probes[i, 2]
        z = R[2, 0] * bx + R[2, 1] * by + R[2, 2] * bz + pos[2]
        if z <= 0.0:
            continue
        x = R[0, 0] * bx + R[0, 1] * by + R[0, 2] * bz + pos[0]
        y = R[1, 0] * bx + R[1, 1] * by + R[1, 2] * bz + pos[1]
        s, gx, gy, e = _section_sdf(x, y, is_circle, hole_radius, hole_verts, hole_normals)
        if s > 0.0:
            if z < s:
                idx, d, nx, ny, nz = 0, z, 0.0, 0.0, -1.0
            else:
                idx, d, nx, ny, nz = wall0 + e, s, -gx, -gy, 0.0
        elif z > depth:
            idx, d, nx, ny, nz = 1, z - depth, 0.0, 0.0, -1.0
        else:
            continue
        pen[idx] = max(pen[idx], d)
        wsum[idx] += d
        pt[idx, 0] += d * x
        pt[idx, 1] += d * y
        pt[idx, 2] += d * z
        nrm[idx, 0] += d * nx
        nrm[idx, 1] += d * ny
        nrm[idx, 2] += d * nz
        max_pen = max(max_pen, d)

    # hole rim probes against the peg prism (body coordinates via R^T)
    sq2 = math.sqrt(2.0)
    for i in range(rim_probes.shape[0]):
        rx = rim_probes[i, 0] - pos[0]
        ry = rim_probes[i, 1] - pos[1]
        rz = rim_probes[i, 2] - pos[2]
        h = -(R[0, 2] * rx + R[1, 2] * ry + R[2, 2] * rz)
        if h <= 0.0 or h >= peg_length:
            continue
        bx = R[0, 0] * rx + R[1, 0] * ry + R[2, 0] * rz
        by = R[0, 1] * rx + R[1, 1] * ry + R[2, 1] * rz
        s, gx, gy, e = _section_sdf(bx, by, is_circle, peg_radius, peg_verts, peg_normals)
        if s >= 0.0:
            continue
        # signed distances of the bounding surfaces (all < 0 inside)
        best = -h
        idx = face
        ox, oy, oz = 0.0, 0.0, 1.0
        if s > best:
            best = s
            idx = side0 + e
            ox, oy, oz = gx, gy, 0.0
        if chamfer > 0.0:
            dc = (s + chamfer - h) / sq2
            if dc >= 0.0:
                continue
            if dc > best:
                best = dc
                idx = cham0 + e
                ox, oy, oz = gx / sq2, gy / sq2, 1.0 / sq2
        d = -best
        pen[idx] = max(pen[idx], d)
        wsum[idx] += d
        for k in range(3):
            pt[idx, k] += d * rim_probes[i, k]
            nrm[idx, k] -= d * (R[k, 0] * ox + R[k, 1] * oy + R[k, 2] * oz)
        max_pen = max(max_pen, d)

    for j in range(n_patches):
        if wsum[j] > 0.0:
            nn = 0.0
            for k in range(3):
                pt[j, k] /= wsum[j]
                # divide first so that vanishing penetrations do not underflow the norm
                nrm[j, k] /= wsum[j]
                nn += nrm[j, k] * nrm[j, k]
            nn = math.sqrt(nn)
            if nn == 0.0:
                # exactly opposing contributions carry no net direction
                pen[j] = 0.0
                continue
            for k in range(3):
                nrm[j, k] /= nn
    return pen, pt, nrm, max_pen


@njit(cache=True)
def patch_forces(pos, lin, ang, anchors, pen, pt, nrm, k_n, c_n, mu, k_t):
    """Normal and friction force per patch plus the summed wrench at the TCP (hole frame)."""
    n_patches = pen.shape[0]
    forces = np.zeros((n_patches, 3))
    vt = np.zeros((n_patches, 3))
    fn = np.zeros(n_patches)
    wrench = np.zeros(6)
    for j in range(n_patches):
        if pen[j] <= 0.0:
            continue
        n = nrm[j]
        r = np.empty(3)
        for k in range(3):
            r[k] = pt[j, k] - pos[k]
        vc = v_cross(ang, r)
        for k in range(3):
            vc[k] += lin[k]
        vn = vc[0] * n[0] + vc[1] * n[1] + vc[2] * n[2]
        f_n = k_n * pen[j] - c_n * vn
        if f_n < 0.0:
            f_n = 0.0
        fn[j] = f_n
        a = anchors[j]
        an = a[0] * n[0] + a[1] * n[1] + a[2] * n[2]
        ft = np.empty(3)
        mag = 0.0
        for k in range(3):
            vt[j, k] = vc[k] - vn * n[k]
            ft[k] = -k_t * (a[k] - an * n[k]) - c_n * vt[j, k]
            mag += ft[k] * ft[k]
        mag = math.sqrt(mag)
        cap = mu * f_n
        if mag > cap:
            s = cap / mag
            for k in range(3):
                ft[k] *= s
        for k in range(3):
            forces[j, k] = f_n * n[k] + ft[k]
        tq = v_cross(r, forces[j])
        for k in range(3):
            wrench[k] += forces[j, k]
            wrench[3 + k] += tq[k]
    return wrench, fn, vt


@njit(cache=True)
def update_anchors(anchors, pen, pt, nrm, pos, lin, ang, fn, mu, k_t, dt):
    out = np.zeros_like(anchors)
    for j in range(anchors.shape[0]):
        if pen[j] <= 0.0:
            continue
        n = nrm[j]
        r = np.empty(3)
        for k in range(3):
            r[k] = pt[j, k] - pos[k]
        vc = v_cross(ang, r)
        for k in range(3):
            vc[k] += lin[k]
        vn = vc[0] * n[0] + vc[1] * n[1] + vc[2] * n[2]
        a = anchors[j]
        an = a[0] * n[0] + a[1] * n[1] + a[2] * n[2]
        mag = 0.0
        for k in range(3):
            out[j, k] = a[k] - an * n[k] + (vc[k] - vn * n[k]) * dt
            mag += out[j, k] ** 2
        mag = math.sqrt(mag)
        lim = mu * fn[j] / k_t
        if mag > lim:
            s = lim / mag
            for k in range(3):
                out[j, k] *= s
    return out


@njit(cache=True)
def contact_kernel(pos, quat, twist, anchors, hole_t, hole_q, params, geom_args):
    """Contact wrench on the peg in the world frame.

    Returns ``(wrench, patch data..., max_penetration)``; the patch data is
    expressed in the hole frame and reused by the anchor update.
    """
    (
        is_circle,
        peg_radius,
        hole_radius,
        peg_verts,
        peg_normals,
        hole_verts,
        hole_normals,
        peg_probes,
        rim_probes,
        chamfer,
        depth,
        peg_length,
        bound_radius,
    ) = geom_args
    n_patches = anchors.shape[0]
    rel = np.empty(3)
    for k in range(3):
        rel[k] = pos[k] - hole_t[k]
    pos_h = q_rotate_inv(hole_q, rel)
    quat_h = q_mul(q_conj(hole_q), quat)
    lin_h = q_rotate_inv(hole_q, twist[:3])
    ang_h = q_rotate_inv(hole_q, twist[3:])
    pen, pt, nrm, max_pen = contact_patches(
        pos_h,
        quat_h,
        is_circle,
        peg_radius,
        hole_radius,
        peg_verts,
        peg_normals,
        hole_verts,
        hole_normals,
        peg_probes,
        rim_probes,
        chamfer,
        depth,
        peg_length,
        bound_radius,
        n_patches,
    )
    w_h, fn, vt = patch_forces(
        pos_h, lin_h, ang_h, anchors, pen, pt, nrm, params[0], params[1], params[2], params[3]
    )
    w = np.empty(6)
    w[:3] = q_rotate(hole_q, w_h[:3])
    w[3:] = q_rotate(hole_q, w_h[3:])
    return w, pen, pt, nrm, fn, pos_h, max_pen


@njit(cache=True)
def plant_step_kernel(pos, quat, twist, anchors, applied, noise, inertia, hole_t, hole_q, params, noise_scale, geom_args):
    """One semi-implicit Euler step.

    Returns new ``(pos, quat, twist, anchors, measured_wrench, contact_wrench, max_pen)``.
    """
    dt = params[4]
    w, pen, pt, nrm, fn, pos_h, max_pen = contact_kernel(
        pos, quat, twist, anchors, hole_t, hole_q, params, geom_args
    )
    new_twist = np.empty(6)
    for i in range(6):
        new_twist[i] = twist[i] + (applied[i] + w[i]) / inertia[i] * dt
    new_pos, new_quat = integrate_twist_kernel(pos, quat, new_twist, dt)
    lin_h = q_rotate_inv(hole_q, new_twist[:3])
    ang_h = q_rotate_inv(hole_q, new_twist[3:])
    new_anchors = update_anchors(anchors, pen, pt, nrm, pos_h, lin_h, ang_h, fn, params[2], params[3], dt)
    measured = np.empty(6)
    for i in range(6):
        measured[i] = w[i] + noise[i] * noise_scale[i]
    return new_pos, new_quat, new_twist, new_anchors, measured, w, max_pen


# ---------------------------------------------------------------------------
# value-level API


@dataclass(frozen=True)
class PlantState:
    percept: PerceptVector
    in_contact: bool = False
    first_contact_time: float | None = None
    anchors: np.ndarray | None = None
    contact: Wrench = field(default_factory=Wrench)

    @classmethod
    def at_rest(cls, pose: Pose, scenario: ScenarioSpec, time: float = 0.0) -> "PlantState":
        return cls(
            PerceptVector(pose, Twist(), Wrench(), time, True),
            anchors=np.zeros((scenario.geometry.n_patches, 3)),
        )

    def _anchors(self, scenario: ScenarioSpec) -> np.ndarray:
        if self.anchors is None:
            return np.zeros((scenario.geometry.n_patches, 3))
        return np.ascontiguousarray(self.anchors, dtype=float)


def _kernel_inputs(state: PlantState, scenario: ScenarioSpec):
    p = state.percept
    return (
        np.array(p.pose.translation),
        np.array(p.pose.orientation),
        p.twist.to_vector(),
        state._anchors(scenario),
        np.array(scenario.hole_pose.translation),
        np.array(scenario.hole_pose.orientation),
    )


def contact_wrench(state: PlantState, scenario: ScenarioSpec, config: PlantConfig) -> Wrench:
    """Contact wrench the hole block exerts on the peg, at the TCP, world frame."""
    pos, quat, twist, anchors, ht, hq = _kernel_inputs(state, scenario)
    w, *_ = contact_kernel(pos, quat, twist, anchors, ht, hq, config.params_array(), scenario.geometry.args())
    return Wrench.from_vector(w)


def max_penetration(state: PlantState, scenario: ScenarioSpec, config: PlantConfig) -> float:
    pos, quat, twist, anchors, ht, hq = _kernel_inputs(state, scenario)
    *_, mp = contact_kernel(pos, quat, twist, anchors, ht, hq, config.params_array(), scenario.geometry.args())
    return float(mp)


def plant_step(
    state: PlantState,
    applied: Wrench,
    scenario: ScenarioSpec,
    config: PlantConfig,
    rng: np.random.Generator,
) -> PlantState:
    """Advance the plant by one period under ``applied`` (world frame, at the TCP).

    Gravity is assumed perfectly compensated.  The measured wrench is the
    contact wrench plus white noise drawn from ``rng`` (six standard
    normals per step, always drawn so streams stay aligned).
    """
    u = applied.to_vector()
    if not np.all(np.isfinite(u)):
        raise SimulationIntegrityError("applied wrench is not finite")
    pos, quat, twist, anchors, ht, hq = _kernel_inputs(state, scenario)
    noise = rng.standard_normal(6)
    new_pos, new_quat, new_twist, new_anchors, measured, w, max_pen = plant_step_kernel(
        pos,
        quat,
        twist,
        anchors,
        u,
        noise,
        config.inertia,
        ht,
        hq,
        config.params_array(),
        config.noise_scale(),
        scenario.geometry.args(),
    )
    if max_pen > MAX_PENETRATION:
        raise SimulationIntegrityError(f"penetration {max_pen * 1e3:.2f} mm exceeds {MAX_PENETRATION * 1e3} mm")
    if not (np.all(np.isfinite(new_pos)) and np.all(np.isfinite(new_twist))):
        raise SimulationIntegrityError("plant state became non-finite")
    t = state.percept.time + config.step_dt
    in_contact = bool(force_norm(w) > CONTACT_FORCE_THRESHOLD)
    first = state.first_contact_time
    if first is None and in_contact:
        first = t
    percept = PerceptVector(
        Pose(new_pos, new_quat),
        Twist.from_vector(new_twist),
        Wrench.from_vector(measured),
        t,
        state.percept.grasped,
    )
    return PlantState(percept, in_contact, first, new_anchors, Wrench.from_vector(w))


def insertion_depth(state: PlantState, scenario: ScenarioSpec) -> float:
    """Depth of the peg tip below the hole entry plane (negative above it)."""
    rel = np.asarray(state.percept.pose.translation) - scenario.hole_pose.translation
    return float(q_rotate_inv(np.array(scenario.hole_pose.orientation), rel)[2])


def with_noise(config: PlantConfig, sigma: tuple) -> PlantConfig:
    return replace(config, wrench_noise_sigma=tuple(sigma))


TRAJECTORY_COLUMNS = (
    ["time", "tx", "ty", "tz", "qw", "qx", "qy", "qz"]
    + ["vx", "vy", "vz", "wx", "wy", "wz"]
    + ["fx", "fy", "fz", "mx", "my", "mz", "contact"]
)


def write_trajectory_csv(path, rows: np.ndarray, extra_columns: dict | None = None) -> None:
    """Dump a ``(n, 21)`` trajectory array (see ``TRAJECTORY_COLUMNS``) plus optional extra columns."""
    rows = np.asarray(rows, dtype=float)
    extra_columns = extra_columns or {}
    header = list(TRAJECTORY_COLUMNS) + list(extra_columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, row in enumerate(rows):
            vals = [repr(float(v)) for v in row[:-1]] + [str(int(row[-1]))]
            vals += [str(col[i]) for col in extra_columns.values()]
            w.writerow(vals)
