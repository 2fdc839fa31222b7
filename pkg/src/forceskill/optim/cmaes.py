"""CMA-ES with rank-mu and rank-one covariance updates, ask/tell on the unit cube.

Strategy constants follow Hansen's tutorial defaults.  Samples are clamped
to the cube before evaluation and the clamped points drive the update
(repair by projection), so the centroid never leaves the cube.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

EIG_FLOOR = 1e-11


@dataclass(frozen=True, eq=False)
class CmaState:
    mean: np.ndarray
    sigma: float
    C: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    generation: int
    popsize: int
    B: np.ndarray
    D: np.ndarray
    pending: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def mu(self) -> int:
        return self.popsize // 2


def _weights(popsize: int, dim: int):
    mu = popsize // 2
    w = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w /= w.sum()
    mueff = 1.0 / np.sum(w**2)
    n = dim
    cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
    cs = (mueff + 2) / (n + mueff + 5)
    c1 = 2 / ((n + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + cs
    chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
    return w, mueff, cc, cs, c1, cmu, damps, chi_n


def default_popsize(dim: int) -> int:
    return 4 + int(3 * math.log(dim))


def cma_init(dim: int, sigma0: float = 0.1, popsize: int | None = None, mean=None) -> CmaState:
    if dim < 1:
        raise ValueError("dimension must be at least one")
    if not sigma0 > 0:
        raise ValueError("initial step size must be positive")
    lam = default_popsize(dim) if popsize is None else int(popsize)
    if lam < 2:
        raise ValueError("population size must be at least two")
    m = np.full(dim, 0.5) if mean is None else np.clip(np.asarray(mean, dtype=float), 0.0, 1.0)
    if m.shape != (dim,):
        raise ValueError("initial centroid has the wrong dimension")
    return CmaState(
        mean=m.copy(), sigma=float(sigma0), C=np.eye(dim), p_sigma=np.zeros(dim), p_c=np.zeros(dim),
        generation=0, popsize=lam, B=np.eye(dim), D=np.ones(dim),
    )


def cma_ask(state: CmaState, rng: np.random.Generator) -> tuple[CmaState, np.ndarray]:
    """Draw ``popsize`` points from ``N(m, sigma^2 C)``, clamped to the unit cube."""
    if state.pending is not None:
        raise RuntimeError("previous batch has not been told yet")
    z = rng.standard_normal((state.popsize, state.dim))
    y = state.mean + state.sigma * (z * state.D) @ state.B.T
    x = np.clip(y, 0.0, 1.0)
    return replace(state, pending=x), x.copy()


def cma_tell(state: CmaState, points: np.ndarray, costs) -> CmaState:
    if state.pending is None:
        raise RuntimeError("tell without a preceding ask")
    points = np.asarray(points, dtype=float)
    costs = np.asarray(costs, dtype=float)
    if points.shape != state.pending.shape or not np.array_equal(points, state.pending):
        raise ValueError("told points differ from the asked batch")
    if costs.shape != (state.popsize,) or not np.all(np.isfinite(costs)):
        raise ValueError("need one finite cost per asked point")

    n = state.dim
    w, mueff, cc, cs, c1, cmu, damps, chi_n = _weights(state.popsize, n)
    order = np.argsort(costs, kind="stable")[: state.mu]
    old = state.mean
    sel = points[order]
    mean = w @ sel
    ys = (sel - old) / state.sigma
    y_w = (mean - old) / state.sigma

    inv_sqrt_C = state.B @ np.diag(1.0 / state.D) @ state.B.T
    p_sigma = (1 - cs) * state.p_sigma + math.sqrt(cs * (2 - cs) * mueff) * (inv_sqrt_C @ y_w)
    gen = state.generation + 1
    norm_ps = float(np.linalg.norm(p_sigma))
    hsig = norm_ps / math.sqrt(1 - (1 - cs) ** (2 * gen)) / chi_n < 1.4 + 2 / (n + 1)
    p_c = (1 - cc) * state.p_c + (hsig * math.sqrt(cc * (2 - cc) * mueff)) * y_w

    rank_mu = (ys.T * w) @ ys
    C = (
        (1 - c1 - cmu) * state.C
        + c1 * (np.outer(p_c, p_c) + (0.0 if hsig else cc * (2 - cc)) * state.C)
        + cmu * rank_mu
    )
    C, B, D = regularize(C)
    sigma = state.sigma * math.exp((cs / damps) * (norm_ps / chi_n - 1))
    if not math.isfinite(sigma) or sigma <= 0:
        raise FloatingPointError("step size left the finite positive range")
    return CmaState(mean, sigma, C, p_sigma, p_c, gen, state.popsize, B, D)


def regularize(C: np.ndarray):
    """Symmetrize and floor the spectrum; returns ``(C, B, D)`` with ``C = B diag(D^2) B^T``."""
    C = 0.5 * (C + C.T)
    evals, B = np.linalg.eigh(C)
    evals = np.maximum(evals, EIG_FLOOR)
    C = (B * evals) @ B.T
    C = 0.5 * (C + C.T)
    return C, B, np.sqrt(evals)
