"""Uniform propose/report wrappers around the search algorithms.

``propose()`` returns the next batch of candidates (an empty batch means
the learner has nothing more to offer); ``report()`` takes the results of
exactly that batch, in order.  Every learner is a deterministic function
of its random stream and the reported results.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bo import bo_propose
from .cmaes import cma_ask, cma_init, cma_tell
from .domain import Candidate, ObjectiveResult, ParamDomain
from .gp import GpFitError, gp_fit
from .lhs import lhs
from .pso import pso_init, pso_report, pso_step


@dataclass
class ProposalLog:
    iteration: int
    unit: list
    acquisition: float | None = None


class Learner:
    name = "base"

    def __init__(self, domain: ParamDomain, rng: np.random.Generator):
        if domain.dim < 1:
            raise ValueError("domain has no free parameter")
        self.domain = domain
        self.rng = rng
        self.stalled = False
        self.log: list[ProposalLog] = []
        self._batch: list[Candidate] | None = None
        self._iteration = 0

    @property
    def pending(self) -> int:
        """Size of the proposed batch still awaiting a report."""
        return len(self._batch) if self._batch else 0

    def propose(self) -> list[Candidate]:
        if self._batch is not None:
            raise RuntimeError("previous batch has not been reported")
        if self.stalled:
            return []
        pts, acq = self._propose()
        batch = [self.domain.candidate(u) for u in pts]
        for c, a in zip(batch, acq):
            self.log.append(ProposalLog(self._iteration, c.unit.tolist(), a))
        self._iteration += 1
        self._batch = batch or None
        return batch

    def report(self, results: list[ObjectiveResult]) -> None:
        if self._batch is None:
            raise RuntimeError("report without a pending batch")
        if len(results) != len(self._batch):
            raise ValueError("report must cover the whole proposed batch")
        for r, c in zip(results, self._batch):
            if not np.array_equal(r.candidate.unit, c.unit):
                raise ValueError("reported result does not belong to the proposed batch")
        self._batch = None
        self._report(results)

    def _propose(self):
        raise NotImplementedError

    def _report(self, results):
        raise NotImplementedError


class LhsLearner(Learner):
    """All points are fixed up front; one batch, no feedback."""

    name = "lhs"

    def __init__(self, domain, rng, n_samples: int = 75):
        super().__init__(domain, rng)
        self.n_samples = int(n_samples)
        self._done = False

    def _propose(self):
        if self._done:
            return [], []
        self._done = True
        return list(lhs(self.n_samples, self.domain.dim, self.rng)), [None] * self.n_samples

    def _report(self, results):
        pass


class CmaLearner(Learner):
    name = "cmaes"

    def __init__(self, domain, rng, popsize: int = 5, generations: int = 15, sigma0: float = 0.1, mean=None):
        super().__init__(domain, rng)
        self.generations = int(generations)
        self.state = cma_init(domain.dim, sigma0, popsize, mean)
        self._points = None

    def _propose(self):
        if self.state.generation >= self.generations:
            return [], []
        self.state, self._points = cma_ask(self.state, self.rng)
        return list(self._points), [None] * len(self._points)

    def _report(self, results):
        self.state = cma_tell(self.state, self._points, [r.cost for r in results])


class PsoLearner(Learner):
    """The first episode evaluates the initial swarm; each later one moves it once."""

    name = "pso"

    def __init__(self, domain, rng, particles: int = 25, episodes: int = 3, c1: float = 2.0, c2: float = 2.0, inertia: float = 1.0):
        super().__init__(domain, rng)
        self.episodes = int(episodes)
        self.state = pso_init(particles, domain.dim, rng, c1, c2, inertia)

    def _propose(self):
        if self.state.episode >= self.episodes:
            return [], []
        if self.state.episode > 0:
            self.state = pso_step(self.state, self.rng)
        return list(self.state.x), [None] * self.state.n_particles

    def _report(self, results):
        self.state = pso_report(self.state, [r.cost for r in results])


class BoLearner(Learner):
    """Latin-hypercube initialization, then one constrained-EI proposal per trial."""

    name = "bo"

    def __init__(
        self, domain, rng, n_init: int = 5, budget: int = 75, n_grid: int = 2048,
        n_samples: int = 10, burn_in: int = 20,
    ):
        super().__init__(domain, rng)
        if n_init < 2:
            raise ValueError("need at least two initial samples")
        self.n_init, self.budget = int(n_init), int(budget)
        self.n_grid, self.n_samples, self.burn_in = int(n_grid), int(n_samples), int(burn_in)
        self.X: list[np.ndarray] = []
        self.cost: list[float] = []
        self.success: list[int] = []

    def _propose(self):
        if len(self.X) >= self.budget:
            return [], []
        if not self.X:
            return list(lhs(self.n_init, self.domain.dim, self.rng)), [None] * self.n_init
        X = np.array(self.X)
        try:
            mc = gp_fit(X, np.array(self.cost), self.rng, self.n_samples, self.burn_in)
            ms = gp_fit(X, np.array(self.success, dtype=float), self.rng, self.n_samples, self.burn_in)
        except GpFitError:
            self.stalled = True
            return [], []
        feasible = [c for c, s in zip(self.cost, self.success) if s]
        best = min(feasible) if feasible else None
        prop = bo_propose(mc, ms, best, self.rng, self.n_grid)
        if prop.stalled:
            self.stalled = True
            return [], []
        return [prop.x], [prop.value]

    def _report(self, results):
        for r in results:
            self.X.append(r.candidate.unit.copy())
            self.cost.append(r.cost)
            self.success.append(r.success)


LEARNERS = {cls.name: cls for cls in (LhsLearner, CmaLearner, PsoLearner, BoLearner)}


def make_learner(kind: str, domain: ParamDomain, rng: np.random.Generator, **settings) -> Learner:
    try:
        cls = LEARNERS[kind]
    except KeyError:
        raise ValueError(f"unknown learner {kind!r}; choose from {sorted(LEARNERS)}") from None
    return cls(domain, rng, **settings)
