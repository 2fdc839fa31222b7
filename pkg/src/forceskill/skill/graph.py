"""Skill graphs: manipulation primitives linked by condition-triggered transitions.

A skill is a DAG of manipulation primitives (MPs).  Each MP emits a twist
and a feed-forward wrench as functions of the percept and the time spent
in the node.  Outgoing transitions fire on success-type conditions over
the recent percepts; a global error condition aborts the skill, and the
skill succeeds once its success condition holds in the terminal node.
Commands pass a slew limiter so node switches do not produce steps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np
from numba import njit

from ..geometry import PerceptVector, TrajectorySlice, Twist, Wrench


class ConditionKind(str, Enum):
    PRE = "pre"
    SUCCESS = "success"
    ERROR = "error"


@dataclass(frozen=True)
class NodeContext:
    """What a membership test or MP generator may look at besides the percept."""

    t_skill: float
    t_node: float
    entry: PerceptVector


Membership = Callable[[PerceptVector, NodeContext], bool]


@dataclass(frozen=True)
class Condition:
    """Set membership over a window of samples.

    Pre and success conditions hold when *every* sample of the window is a
    member; an error condition holds when *any* sample is.
    """

    kind: ConditionKind
    member: Membership
    name: str = ""
    window: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", ConditionKind(self.kind))
        if self.window < 1:
            raise ValueError("condition window must be at least one sample")

    @property
    def universal(self) -> bool:
        return self.kind is not ConditionKind.ERROR


def evaluate_condition(cond: Condition, samples: TrajectorySlice | Sequence[PerceptVector], ctx: NodeContext | None = None) -> bool:
    if len(samples) == 0:
        raise ValueError("cannot evaluate a condition on an empty slice")
    if ctx is None:
        ctx = NodeContext(samples[-1].time, samples[-1].time - samples[0].time, samples[0])
    hits = (bool(cond.member(x, ctx)) for x in samples)
    return all(hits) if cond.universal else any(hits)


class _WindowCounter:
    """Streaming form of :func:`evaluate_condition` over the last ``window`` samples."""

    def __init__(self, cond: Condition):
        self.cond = cond
        self.run = 0  # consecutive members (universal) / samples since last member (existential)
        self.seen = 0

    def reset(self):
        self.run = 0
        self.seen = 0

    def push(self, x: PerceptVector, ctx: NodeContext) -> bool:
        hit = bool(self.cond.member(x, ctx))
        self.seen += 1
        w = self.cond.window
        if self.cond.universal:
            self.run = self.run + 1 if hit else 0
            return self.run >= w
        self.run = 0 if hit else self.run + 1
        return self.run < min(w, self.seen)


@dataclass(frozen=True)
class ManipulationPrimitive:
    name: str
    twist_generator: Callable[[PerceptVector, NodeContext], np.ndarray]
    wrench_generator: Callable[[PerceptVector, NodeContext], np.ndarray]

    def command(self, x: PerceptVector, ctx: NodeContext) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.asarray(self.twist_generator(x, ctx), dtype=float),
            np.asarray(self.wrench_generator(x, ctx), dtype=float),
        )


@dataclass(frozen=True)
class Transition:
    source: str
    target: str
    trigger: Condition
    name: str = ""


@dataclass(frozen=True)
class LearningMetric:
    """Weighted sum of cost terms; each term maps a run outcome to seconds (or any unit)."""

    terms: tuple = ()

    def __post_init__(self):
        for w, fn in self.terms:
            if not 0 < w <= 1:
                raise ValueError("metric weights must lie in (0, 1]")
            if not callable(fn):
                raise ValueError("metric terms must be callables")

    def __call__(self, outcome) -> float:
        return float(sum(w * fn(outcome) for w, fn in self.terms))


@dataclass(frozen=True)
class SkillGraph:
    nodes: tuple[ManipulationPrimitive, ...]
    transitions: tuple[Transition, ...]
    precondition: Condition | None
    success_condition: Condition | None
    error_condition: Condition | None
    learning_metric: LearningMetric | None = None
    context_params: Mapping[str, float] = field(default_factory=dict)
    learned_params: Mapping[str, tuple | None] = field(default_factory=dict)

    def node(self, name: str) -> ManipulationPrimitive:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def outgoing(self, name: str) -> list[Transition]:
        return [t for t in self.transitions if t.source == name]

    @property
    def initial(self) -> str:
        targets = {t.target for t in self.transitions}
        starts = [n.name for n in self.nodes if n.name not in targets]
        return starts[0] if len(starts) == 1 else ""

    @property
    def terminal(self) -> str:
        sources = {t.source for t in self.transitions}
        ends = [n.name for n in self.nodes if n.name not in sources]
        return ends[0] if len(ends) == 1 else ""


def validate(graph: SkillGraph) -> list[str]:
    """Structural faults of a graph; an empty list means the graph is usable."""
    faults = []
    names = [n.name for n in graph.nodes]
    if len(set(names)) != len(names):
        faults.append("duplicate node names")
    known = set(names)
    for t in graph.transitions:
        if t.source not in known or t.target not in known:
            faults.append(f"transition {t.source}->{t.target} references an unknown node")
        if t.trigger.kind is not ConditionKind.SUCCESS:
            faults.append(f"transition {t.source}->{t.target} must be triggered by a success condition")

    # cycle detection by repeated removal of sources (Kahn)
    indeg = {n: 0 for n in known}
    edges = [(t.source, t.target) for t in graph.transitions if t.source in known and t.target in known]
    for _, b in edges:
        indeg[b] += 1
    ready = [n for n, d in indeg.items() if d == 0]
    seen = 0
    while ready:
        n = ready.pop()
        seen += 1
        for a, b in edges:
            if a == n:
                indeg[b] -= 1
                if indeg[b] == 0:
                    ready.append(b)
    if seen != len(known):
        faults.append("backward transition")

    initial, terminal = graph.initial, graph.terminal
    if not initial:
        faults.append("graph needs exactly one initial node")
    if not terminal:
        faults.append("graph needs exactly one terminal node")
    if initial and terminal:
        reach, stack = {initial}, [initial]
        while stack:
            n = stack.pop()
            for a, b in edges:
                if a == n and b not in reach:
                    reach.add(b)
                    stack.append(b)
        if terminal not in reach:
            faults.append("terminal node unreachable from initial node")

    for cond, kind in (
        (graph.precondition, ConditionKind.PRE),
        (graph.success_condition, ConditionKind.SUCCESS),
        (graph.error_condition, ConditionKind.ERROR),
    ):
        if cond is None:
            faults.append(f"missing {kind.value} condition")
        elif cond.kind is not kind:
            faults.append(f"{kind.value} condition has kind {cond.kind.value}")

    overlap = set(graph.context_params) & set(graph.learned_params)
    if overlap:
        faults.append(f"parameters both context and learned: {sorted(overlap)}")
    for name, dom in graph.learned_params.items():
        if dom is None or len(dom) != 2 or not all(math.isfinite(v) for v in dom) or dom[0] > dom[1]:
            faults.append(f"unbounded learned parameter {name}")
    return faults


# ---------------------------------------------------------------------------
# execution


@njit(cache=True)
def slew_kernel(prev, target, max_delta):
    out = np.empty(prev.shape[0])
    for i in range(prev.shape[0]):
        d = target[i] - prev[i]
        if d > max_delta[i]:
            d = max_delta[i]
        elif d < -max_delta[i]:
            d = -max_delta[i]
        out[i] = prev[i] + d
    return out


class Status(str, Enum):
    RUNNING = "running"
    SUCCESS = "success"
    FAILURE = "failure"


@dataclass(frozen=True)
class StepOutput:
    node: str
    twist: Twist
    wrench: Wrench
    status: Status
    reason: str = ""


class SkillRuntime:
    """Steps a skill graph once per control period.

    Order per sample: error condition, success condition (terminal node
    only), outgoing transitions of the active node, then the active MP's
    command through the slew limiter.
    """

    def __init__(self, graph: SkillGraph, dt: float, twist_slope, wrench_slope):
        faults = validate(graph)
        if faults:
            raise ValueError(f"invalid skill graph: {faults}")
        self.graph = graph
        self.dt = dt
        self._dtwist = np.asarray(twist_slope, dtype=float) * dt
        self._dwrench = np.asarray(wrench_slope, dtype=float) * dt
        self.timeline: list[tuple[float, str]] = []
        self.status = Status.RUNNING
        self.reason = ""
        self._started = False

    def start(self, x: PerceptVector) -> bool:
        """Check the precondition on the first sample; failure ends the run immediately."""
        self.t0 = x.time
        self.active = self.graph.initial
        self._enter(self.active, x)
        self._prev_twist = np.zeros(6)
        self._prev_wrench = np.zeros(6)
        self._error = _WindowCounter(self.graph.error_condition)
        self._success = _WindowCounter(self.graph.success_condition)
        self._started = True
        ctx = NodeContext(0.0, 0.0, x)
        if not evaluate_condition(self.graph.precondition, [x], ctx):
            self.status = Status.FAILURE
            self.reason = "precondition"
            return False
        return True

    def _enter(self, name: str, x: PerceptVector):
        self.active = name
        self.entry = x
        self.t_entry = x.time
        self._triggers = [(t, _WindowCounter(t.trigger)) for t in self.graph.outgoing(name)]
        self.timeline.append((x.time, name))

    def step(self, x: PerceptVector) -> StepOutput:
        if not self._started:
            raise RuntimeError("start() must be called before step()")
        if self.status is not Status.RUNNING:
            return StepOutput(self.active, Twist(), Wrench(), self.status, self.reason)
        ctx = NodeContext(x.time - self.t0, x.time - self.t_entry, self.entry)
        if self._error.push(x, ctx):
            self.status, self.reason = Status.FAILURE, self.graph.error_condition.name or "error"
            return StepOutput(self.active, Twist(), Wrench(), self.status, self.reason)
        if self.active == self.graph.terminal and self._success.push(x, ctx):
            self.status, self.reason = Status.SUCCESS, "success"
            return StepOutput(self.active, Twist(), Wrench(), self.status, self.reason)
        for t, counter in self._triggers:
            if counter.push(x, ctx):
                self._enter(t.target, x)
                ctx = NodeContext(x.time - self.t0, 0.0, x)
                break
        twist, wrench = self.graph.node(self.active).command(x, ctx)
        self._prev_twist = slew_kernel(self._prev_twist, twist, self._dtwist)
        self._prev_wrench = slew_kernel(self._prev_wrench, wrench, self._dwrench)
        return StepOutput(
            self.active,
            Twist.from_vector(self._prev_twist),
            Wrench.from_vector(self._prev_wrench),
            self.status,
        )


def step_graph(runtime: SkillRuntime, x: PerceptVector) -> StepOutput:
    return runtime.step(x)


@dataclass(frozen=True)
class RunOutcome:
    """Facts about a finished run that the learning metric needs."""

    success: bool
    t_end: float
    t_first_contact: float | None
    depth: float
    hole_depth: float
    t_max: float = 15.0


def execution_time(outcome: RunOutcome) -> float:
    if outcome.t_first_contact is None:
        raise ValueError("successful run without recorded contact")
    return outcome.t_end - outcome.t_first_contact


def metric_cost(metric: LearningMetric | None, outcome: RunOutcome, penalty_weight: float = 1.0) -> tuple[float, int]:
    """Cost ``q`` and result ``r`` of one run.

    Success costs the metric (execution time from first contact by
    default).  Failure costs ``t_max`` plus ``penalty_weight * t_max``
    times the fraction of the hole depth still to go.
    """
    if outcome.success:
        q = metric(outcome) if metric is not None else execution_time(outcome)
        return float(q), 1
    remaining = min(1.0, max(0.0, (outcome.hole_depth - outcome.depth) / outcome.hole_depth))
    return float(outcome.t_max + penalty_weight * remaining * outcome.t_max), 0
