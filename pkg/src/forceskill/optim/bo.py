"""Bayesian optimization with constrained expected improvement.

One GP models the cost of every trial, a second GP models the success
indicator.  The acquisition is ``EI(x) * Pr(success | x)``, integrated over
the hyperparameter samples of both models, maximized over a scrambled
Sobol grid and refined locally from the best grid points.  It is evaluated
in log space: far from any success both factors underflow long before
their ranking stops being informative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import erfcx, logsumexp
from scipy.stats import norm, qmc

from .gp import GpModel

STALL_STD = 1e-12
_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def expected_improvement(mean, var, best: float) -> np.ndarray:
    """EI for minimization; zero variance gives the deterministic improvement."""
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.maximum(np.asarray(var, dtype=float), 0.0))
    gain = best - mean
    out = np.maximum(gain, 0.0)
    pos = sd > 0
    z = gain[pos] / sd[pos]
    out[pos] = gain[pos] * norm.cdf(z) + sd[pos] * norm.pdf(z)
    return out


def _log_h(z):
    """``log(pdf(z) + z cdf(z))`` without underflow for very negative ``z``."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    hi = z > -1.0
    zh = z[hi]
    out[hi] = np.log(norm.pdf(zh) + zh * norm.cdf(zh))
    zl = z[~hi]
    # cdf / pdf = sqrt(pi / 2) erfcx(-z / sqrt(2))
    ratio = math.sqrt(math.pi / 2) * erfcx(-zl / math.sqrt(2))
    out[~hi] = -0.5 * zl * zl - _HALF_LOG_2PI + np.log1p(zl * ratio)
    return out


def log_expected_improvement(mean, var, best: float) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.maximum(np.asarray(var, dtype=float), 0.0))
    gain = best - mean
    with np.errstate(divide="ignore"):
        out = np.log(np.maximum(gain, 0.0))
    pos = sd > 0
    out[pos] = np.log(sd[pos]) + _log_h(gain[pos] / sd[pos])
    return out


def log_success_probability(model: GpModel, Xs, threshold: float = 0.5) -> np.ndarray:
    """log Pr(indicator > threshold), with the probability averaged over hyperparameter samples."""
    mus, vs = model.predict_samples(Xs)
    sd = np.sqrt(vs + model.noise[:, None])
    lp = norm.logcdf((mus - threshold) / np.maximum(sd, 1e-300))
    return logsumexp(lp, axis=0) - math.log(lp.shape[0])


def success_probability(model: GpModel, Xs, threshold: float = 0.5) -> np.ndarray:
    return np.exp(log_success_probability(model, Xs, threshold))


def acquisition(model_cost: GpModel, model_success: GpModel, best_feasible: float | None, Xs) -> np.ndarray:
    """log of ``EI * Pr(success)``; just ``log Pr(success)`` while nothing has succeeded."""
    Xs = np.atleast_2d(Xs)
    lpr = log_success_probability(model_success, Xs)
    if best_feasible is None:
        return lpr
    mus, vs = model_cost.predict_samples(Xs)
    lei = np.array([log_expected_improvement(m, v, best_feasible) for m, v in zip(mus, vs)])
    return logsumexp(lei, axis=0) - math.log(lei.shape[0]) + lpr


@dataclass(frozen=True)
class Proposal:
    x: np.ndarray
    value: float  # log acquisition
    stalled: bool


def bo_propose(
    model_cost: GpModel,
    model_success: GpModel,
    best_feasible_cost: float | None,
    rng: np.random.Generator,
    n_grid: int = 2048,
    n_refine: int = 5,
) -> Proposal:
    dim = model_cost.dim
    grid = qmc.Sobol(dim, scramble=True, seed=rng).random(n_grid)
    _, var_c = model_cost.predict(grid)
    _, var_s = model_success.predict(grid)
    if np.sqrt(var_c.max()) < STALL_STD * model_cost.y_scale and np.sqrt(var_s.max()) < STALL_STD:
        return Proposal(rng.random(dim), 0.0, True)

    vals = acquisition(model_cost, model_success, best_feasible_cost, grid)
    order = np.argsort(-vals, kind="stable")[:n_refine]
    best_x, best_v = grid[order[0]].copy(), float(vals[order[0]])

    def neg(x):
        return -float(acquisition(model_cost, model_success, best_feasible_cost, x[None, :])[0])

    for i in order:
        if not np.isfinite(vals[i]):
            continue
        res = minimize(neg, grid[i], method="L-BFGS-B", bounds=[(0.0, 1.0)] * dim, options={"maxiter": 50})
        if np.all(np.isfinite(res.x)) and -res.fun > best_v:
            best_x, best_v = np.clip(res.x, 0.0, 1.0), float(-res.fun)
    if not np.isfinite(best_v):
        return Proposal(rng.random(dim), 0.0, True)
    return Proposal(best_x, best_v, False)
