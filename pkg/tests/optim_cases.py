"""Optimizer oracle routines shared by the unit tests and the acceptance gate."""
from __future__ import annotations

import numpy as np

from forceskill.optim.cmaes import cma_ask, cma_init, cma_tell
from forceskill.optim.gp import gp_fit
from forceskill.optim.lhs import lhs, strata
from forceskill.optim.pso import clamp_move, velocity_update

SPHERE_CENTRE = np.array([0.3, 0.6, 0.45, 0.7, 0.35, 0.55])


def cma_sphere(seed: int, budget: int = 2000, target: float = 1e-9, popsize: int = 5) -> tuple[float, int]:
    """Best sphere value reached and evaluations used, started at the cube centre."""
    rng = np.random.default_rng(seed)
    s = cma_init(6, 0.1, popsize)
    best, n = np.inf, 0
    while n < budget:
        s, X = cma_ask(s, rng)
        f = ((X - SPHERE_CENTRE) ** 2).sum(1)
        n += len(X)
        best = min(best, float(f.min()))
        s = cma_tell(s, X, f)
        if best < target:
            break
    return best, n


def lhs_is_stratified(n: int, dim: int, seed: int) -> bool:
    pts = lhs(n, dim, np.random.default_rng(seed))
    if pts.shape != (n, dim) or np.any(pts < 0) or np.any(pts >= 1):
        return False
    s = strata(pts)
    return all(np.array_equal(np.sort(s[:, j]), np.arange(n)) for j in range(dim))


def pso_hand_example() -> tuple[float, float, float]:
    """x=0.4, v=0.1, p=0.6, g=0.8, c1=c2=2, R1=R2=1: v' = 0.1 + 0.4 + 0.8 = 1.3, x' clamps to 1."""
    v = velocity_update(np.array([0.4]), np.array([0.1]), np.array([0.6]), np.array([0.8]), 2.0, 2.0, 1.0, 1.0)
    x, v_after = clamp_move(np.array([0.4]), v)
    return float(v[0]), float(x[0]), float(v_after[0])


def pso_hand_value() -> float:
    # the hand computation in double precision, same operation order as the update
    return 0.1 + 2.0 * 1.0 * (0.6 - 0.4) + 2.0 * 1.0 * (0.8 - 0.4)


def gp_interpolation_error(seeds=range(20), dims=(1, 2, 4, 6), n: int = 10) -> float:
    """Worst absolute error of the posterior mean at noiseless training points."""
    worst = 0.0
    for s in seeds:
        rng = np.random.default_rng(s)
        for d in dims:
            X = rng.random((n, d))
            y = X @ rng.normal(size=d) + 0.3
            m = gp_fit(X, y, rng, fixed_noise=1e-10)
            mu, _ = m.predict(X)
            worst = max(worst, float(np.abs(mu - y).max()))
    return worst
