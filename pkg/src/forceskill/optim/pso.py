"""Particle swarm optimization on the unit cube.

Velocity update with a single inertia term

    v <- w v + c1 R1 (p - x) + c2 R2 (g - x)
    x <- x + v

and clamping to the cube, zeroing the velocity on every clamped coordinate.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True, eq=False)
class PsoState:
    x: np.ndarray
    v: np.ndarray
    p: np.ndarray
    p_cost: np.ndarray
    g: np.ndarray
    g_cost: float
    c1: float = 2.0
    c2: float = 2.0
    inertia: float = 1.0
    episode: int = 0

    @property
    def n_particles(self) -> int:
        return self.x.shape[0]


def pso_init(n: int, dim: int, rng: np.random.Generator, c1=2.0, c2=2.0, inertia=1.0) -> PsoState:
    """Uniform positions in the cube and uniform velocities in ``[-1, 1]`` (the cube's extent)."""
    if n < 1 or dim < 1:
        raise ValueError("need at least one particle and one dimension")
    x = rng.random((n, dim))
    v = rng.uniform(-1.0, 1.0, (n, dim))
    return PsoState(
        x=x, v=v, p=x.copy(), p_cost=np.full(n, np.inf), g=x[0].copy(), g_cost=np.inf,
        c1=float(c1), c2=float(c2), inertia=float(inertia),
    )


def pso_report(state: PsoState, costs) -> PsoState:
    """Fold the costs of the current positions into personal and global bests."""
    costs = np.asarray(costs, dtype=float)
    if costs.shape != (state.n_particles,) or not np.all(np.isfinite(costs)):
        raise ValueError("need one finite cost per particle")
    better = costs < state.p_cost
    p = state.p.copy()
    p[better] = state.x[better]
    p_cost = np.where(better, costs, state.p_cost)
    i = int(np.argmin(p_cost))
    g, g_cost = state.g, state.g_cost
    if p_cost[i] < g_cost:
        g, g_cost = p[i].copy(), float(p_cost[i])
    return replace(state, p=p, p_cost=p_cost, g=g, g_cost=g_cost, episode=state.episode + 1)


def velocity_update(x, v, p, g, c1, c2, r1, r2, inertia=1.0):
    return inertia * v + c1 * r1 * (p - x) + c2 * r2 * (g - x)


def clamp_move(x, v):
    """Advance by ``v`` and clamp to the cube; clamped coordinates lose their velocity."""
    x_new = x + v
    out = (x_new < 0.0) | (x_new > 1.0)
    return np.clip(x_new, 0.0, 1.0), np.where(out, 0.0, v)


def pso_step(state: PsoState, rng: np.random.Generator) -> PsoState:
    """Move every particle once; the new positions are ``state.x`` of the result."""
    if not np.all(np.isfinite(state.p_cost)):
        raise RuntimeError("every particle needs a reported cost before moving")
    r1 = rng.random(state.x.shape)
    r2 = rng.random(state.x.shape)
    v = velocity_update(state.x, state.v, state.p, state.g, state.c1, state.c2, r1, r2, state.inertia)
    x, v = clamp_move(state.x, v)
    return replace(state, x=x, v=v)
