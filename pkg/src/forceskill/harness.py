"""Experiment protocol: trials over perturbed hole estimates, learner loops, statistics, export.

A trial evaluates one candidate on several plant instances whose task
frame (the estimated hole pose) is shifted in x/y; its cost is the mean
of the per-run costs.  An experiment runs one learner for a trial budget
and appends every trial to a line-delimited JSON file, so an interrupted
experiment resumes by replaying the recorded results into a freshly
seeded learner.
"""
from __future__ import annotations

import json
import logging
import math
import os
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .config import ExperimentConfig
from .geometry import Pose
from .impedance import ControllerGains, ControllerLimits, MetaParams
from .optim.domain import Candidate, ObjectiveResult, ParamDomain
from .optim.learners import make_learner
from .plant import PlantConfig, SimulationIntegrityError, make_scenario
from .rollout import RolloutSetup, run_rollout
from .skill.peg_in_hole import SKILL_DOMAINS, PegInHoleParams

log = logging.getLogger(__name__)

# meta-parameter domains, (translational, rotational) pairs
META_DOMAINS = {
    "alpha": ((0.0, 0.4), (0.0, 1.1765)),
    "beta": ((0.0, 200000.0), (0.0, 173010.0)),
    "gamma_alpha": ((0.0, 5e-4), (0.0, 3.4e-4)),
    "gamma_beta": ((0.0, 0.0), (0.0, 0.0)),
}

CI_LEVEL = 0.90
CSV_COLUMNS = ("trial", "mean_cost", "ci_lo", "ci_hi", "best_so_far")


# the key's chamfers make the initial alignment unnecessary, so it is not learned there
SCENARIO_DOMAINS = {"key": {"phi_init": (0.0, 0.0)}}


def default_domain(overrides: dict | None = None, scenario: str | None = None) -> ParamDomain:
    bounds = {}
    for name, (trans, rot) in META_DOMAINS.items():
        bounds[f"{name}_t"] = trans
        bounds[f"{name}_r"] = rot
    bounds.update(SKILL_DOMAINS)
    bounds.update(SCENARIO_DOMAINS.get(scenario, {}))
    for name, b in (overrides or {}).items():
        if name not in bounds:
            raise ValueError(f"unknown parameter {name!r} in domain overrides")
        bounds[name] = tuple(b)
    return ParamDomain.from_bounds(bounds)


def build_setup(config: ExperimentConfig, values: dict) -> RolloutSetup:
    """Wire scenario, controller, plant and skill for one parameter vector (physical units)."""
    sc_kw = dict(config.scenario_overrides)
    hole = sc_kw.pop("hole_pose", None)
    scenario = make_scenario(config.scenario, Pose.from_array(hole) if hole is not None else None, **sc_kw)
    meta = MetaParams(
        *[(values[f"{n}_t"], values[f"{n}_r"]) for n in ("alpha", "beta", "gamma_alpha", "gamma_beta")]
    )
    skill_kw = dict(d=scenario.depth, a_r=scenario.max_rot_amplitude, lead_in=scenario.lead_in)
    skill_kw.update(config.skill)
    skill_kw.update({k: values[k] for k in SKILL_DOMAINS})
    ctrl = dict(config.controller)
    plant_kw = {k: tuple(v) if isinstance(v, list) else v for k, v in config.plant.items()}
    return RolloutSetup(
        scenario=scenario,
        skill=PegInHoleParams(**{k: tuple(v) if isinstance(v, list) else v for k, v in skill_kw.items()}),
        meta=meta,
        plant=PlantConfig(**plant_kw),
        limits=ControllerLimits(**ctrl.get("limits", {})),
        gains=ControllerGains(**ctrl.get("gains", {})),
        initial_stiffness=float(ctrl.get("initial_stiffness", 0.25)),
    )


@dataclass
class TrialRecord:
    index: int
    candidate: dict
    unit: list
    costs: list
    mean_cost: float
    successes: int
    wall_time: float  # simulated seconds spent executing the runs
    seed: int
    reasons: list = field(default_factory=list)
    iteration: int = 0
    acquisition: float | None = None
    diagnostic: str = ""

    def to_json(self) -> str:
        return json.dumps({"type": "trial", **asdict(self)}, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        d = {k: v for k, v in d.items() if k != "type"}
        return cls(**d)

    @property
    def faulted(self) -> bool:
        return bool(self.diagnostic)


def trial_seed(config: ExperimentConfig, repetition: int, index: int) -> int:
    return int(np.random.SeedSequence([config.seed, repetition, 1, index]).generate_state(1)[0])


def run_trial(candidate: Candidate, config: ExperimentConfig, seed: int, index: int = 0) -> TrialRecord:
    """Evaluate a candidate once per task-frame offset; integrity faults cost the maximum penalty."""
    values = candidate.as_dict()
    setup = build_setup(config, values)
    t_max = setup.skill.t_max
    worst = t_max + config.penalty_weight * t_max
    costs, reasons, succ, sim_time, diags = [], [], 0, 0.0, []
    for j, offset in enumerate(config.offsets):
        rng = np.random.default_rng([seed, j])
        try:
            r = run_rollout(setup, offset, rng, config.penalty_weight)
        except SimulationIntegrityError as exc:
            costs.append(worst)
            reasons.append("fault")
            diags.append(f"run {j}: {exc}")
            sim_time += t_max
            continue
        costs.append(r.cost)
        reasons.append(r.reason)
        succ += r.success
        sim_time += r.t_end
    return TrialRecord(
        index=index,
        candidate=values,
        unit=[float(u) for u in candidate.unit],
        costs=[float(c) for c in costs],
        mean_cost=float(np.mean(costs)),
        successes=succ,
        wall_time=float(sim_time),
        seed=int(seed),
        reasons=reasons,
        diagnostic="; ".join(diags),
    )


# ---------------------------------------------------------------------------
# experiments


def results_path(out_dir, repetition: int) -> Path:
    return Path(out_dir) / f"results_rep{repetition:03d}.jsonl"


def read_results(path) -> tuple[list[TrialRecord], list[dict]]:
    """Trial records and other events of a results file; a torn last line is ignored."""
    path = Path(path)
    if not path.exists():
        return [], []
    records, events = [], []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError:
            break
        if d.get("type") == "trial":
            records.append(TrialRecord.from_dict(d))
        else:
            events.append(d)
    return records, events


class _Writer:
    def __init__(self, path: Path, keep: list[str]):
        self.path = path
        path.parent.mkdir(parents=True, exist_ok=True)
        # rewrite the valid prefix so a torn line never survives a resume
        tmp = path.with_suffix(".tmp")
        tmp.write_text("".join(line + "\n" for line in keep))
        os.replace(tmp, path)
        self.fh = open(path, "a")

    def write(self, line: str):
        self.fh.write(line + "\n")
        self.fh.flush()
        os.fsync(self.fh.fileno())

    def close(self):
        self.fh.close()


Evaluator = Callable[[Candidate, ExperimentConfig, int, int], TrialRecord]


def run_experiment(
    config: ExperimentConfig,
    repetition: int = 0,
    out_dir=None,
    evaluate: Evaluator = run_trial,
    max_new_trials: int | None = None,
) -> list[TrialRecord]:
    """Run (or resume) one experiment of the configured learner.

    Recorded trials are replayed into the learner instead of being
    re-evaluated; a mismatch between a replayed proposal and the file
    means the file belongs to another configuration and is an error.
    ``max_new_trials`` stops after that many fresh evaluations (used to
    simulate interruptions).
    """
    domain = default_domain(config.domain, config.scenario)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, repetition, 0]))
    learner = make_learner(config.learner, domain, rng, **config.learner_kwargs)
    path = results_path(out_dir if out_dir is not None else config.out_dir, repetition)
    done, events = read_results(path)
    writer = _Writer(path, [r.to_json() for r in done] + [json.dumps(e, sort_keys=True) for e in events])
    records: list[TrialRecord] = []
    fresh = 0
    try:
        while len(records) < config.budget:
            batch = learner.propose()
            if not batch:
                if learner.stalled and not any(e.get("type") == "stall" for e in events):
                    writer.write(json.dumps({"type": "stall", "after": len(records)}, sort_keys=True))
                    log.warning("learner stalled after %d trials", len(records))
                break
            it = learner.log[-1].iteration
            acq = [p.acquisition for p in learner.log[-len(batch):]]
            batch = batch[: config.budget - len(records)]
            results = []
            for cand, a in zip(batch, acq):
                idx = len(records)
                if idx < len(done):
                    rec = done[idx]
                    if not np.array_equal(np.asarray(rec.unit), cand.unit):
                        raise ValueError(f"{path} does not match this configuration at trial {idx}")
                else:
                    if max_new_trials is not None and fresh >= max_new_trials:
                        return records
                    rec = evaluate(cand, config, trial_seed(config, repetition, idx), idx)
                    rec.iteration, rec.acquisition = it, a
                    writer.write(rec.to_json())
                    fresh += 1
                records.append(rec)
                results.append(ObjectiveResult(rec.mean_cost, int(rec.successes == len(rec.costs)), cand))
            if len(results) == learner.pending:
                learner.report(results)
    finally:
        writer.close()
    return records


def run_repetitions(config: ExperimentConfig, out_dir=None, evaluate: Evaluator = run_trial) -> list[list[TrialRecord]]:
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "config.json"
    cfg_text = json.dumps(config.to_dict(), indent=2, sort_keys=True)
    if cfg_path.exists() and cfg_path.read_text() != cfg_text:
        raise ValueError(f"{out} holds results of a different configuration")
    cfg_path.write_text(cfg_text)
    return [run_experiment(config, k, out, evaluate) for k in range(config.repetitions)]


# ---------------------------------------------------------------------------
# statistics and export


@dataclass
class ExperimentSummary:
    trial: np.ndarray
    mean_cost: np.ndarray
    half_width: np.ndarray
    best_so_far: np.ndarray
    n_experiments: int
    ci_defined: bool
    best_record: TrialRecord | None

    @property
    def ci_lo(self) -> np.ndarray:
        return self.mean_cost - self.half_width

    @property
    def ci_hi(self) -> np.ndarray:
        return self.mean_cost + self.half_width

    def rows(self) -> np.ndarray:
        return np.column_stack([self.trial, self.mean_cost, self.ci_lo, self.ci_hi, self.best_so_far])


def t_half_width(samples: np.ndarray, level: float = CI_LEVEL) -> np.ndarray:
    """Student-t half-width of the mean along axis 0; zero when only one sample."""
    n = samples.shape[0]
    if n < 2:
        return np.zeros(samples.shape[1:])
    sd = samples.std(axis=0, ddof=1)
    return stats.t.ppf(0.5 + level / 2, n - 1) * sd / math.sqrt(n)


def summarize(experiments: Sequence[Sequence[TrialRecord]], level: float = CI_LEVEL) -> ExperimentSummary:
    if len(experiments) == 0:
        raise ValueError("need at least one experiment")
    lengths = [len(e) for e in experiments]
    n = min(lengths)
    if len(set(lengths)) > 1:
        warnings.warn(f"experiments have different lengths {sorted(set(lengths))}; truncating to {n}")
    costs = np.array([[r.mean_cost for r in e[:n]] for e in experiments], dtype=float).reshape(len(experiments), n)
    best = np.minimum.accumulate(costs, axis=1) if n else costs
    all_recs = [r for e in experiments for r in e]
    best_rec = min(all_recs, key=lambda r: r.mean_cost) if all_recs else None
    return ExperimentSummary(
        trial=np.arange(n),
        mean_cost=costs.mean(0) if n else np.zeros(0),
        half_width=t_half_width(costs, level) if n else np.zeros(0),
        best_so_far=best.mean(0) if n else np.zeros(0),
        n_experiments=len(experiments),
        ci_defined=len(experiments) > 1,
        best_record=best_rec,
    )


def write_csv(path, summary: ExperimentSummary) -> Path:
    path = Path(path)
    lines = [",".join(CSV_COLUMNS)]
    for row in summary.rows():
        lines.append(",".join([str(int(row[0]))] + [repr(float(v)) for v in row[1:]]))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path) -> np.ndarray:
    text = Path(path).read_text().splitlines()
    if not text or text[0].split(",") != list(CSV_COLUMNS):
        raise ValueError(f"{path} is not a summary CSV")
    rows = [[float(v) for v in line.split(",")] for line in text[1:] if line.strip()]
    return np.array(rows, dtype=float).reshape(len(rows), len(CSV_COLUMNS))


def write_svg(path, summary: ExperimentSummary, title: str = "", width: int = 480, height: int = 300) -> Path:
    """Mean cost per trial with the shaded confidence band."""
    path = Path(path)
    pad_l, pad_r, pad_t, pad_b = 50, 15, 30, 40
    x = summary.trial.astype(float)
    lo, hi, mean = summary.ci_lo, summary.ci_hi, summary.mean_cost
    if len(x) == 0:
        x, lo, hi, mean = np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1)
    x_max = max(float(x.max()), 1.0)
    y_min, y_max = 0.0, max(float(hi.max()), 1.0) * 1.05

    def sx(v):
        return pad_l + (width - pad_l - pad_r) * v / x_max

    def sy(v):
        return height - pad_b - (height - pad_t - pad_b) * (v - y_min) / (y_max - y_min)

    band = [f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, hi)]
    band += [f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x[::-1], lo[::-1])]
    line = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, mean))
    ticks = []
    for k in range(6):
        v = y_min + (y_max - y_min) * k / 5
        ticks.append(
            f'<text x="{pad_l - 6}" y="{sy(v) + 4:.2f}" font-size="10" text-anchor="end">{v:.1f}</text>'
            f'<line x1="{pad_l}" x2="{width - pad_r}" y1="{sy(v):.2f}" y2="{sy(v):.2f}" stroke="#ddd"/>'
        )
    svg = f"""<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">
<rect width="100%" height="100%" fill="white"/>
{''.join(ticks)}
<polygon points="{' '.join(band)}" fill="#bbbbbb" fill-opacity="0.6" stroke="none"/>
<polyline points="{line}" fill="none" stroke="black" stroke-width="1.5"/>
<line x1="{pad_l}" x2="{width - pad_r}" y1="{height - pad_b}" y2="{height - pad_b}" stroke="black"/>
<line x1="{pad_l}" x2="{pad_l}" y1="{pad_t}" y2="{height - pad_b}" stroke="black"/>
<text x="{(width + pad_l) / 2:.1f}" y="{height - 8}" font-size="11" text-anchor="middle">trial</text>
<text x="14" y="{(height - pad_b + pad_t) / 2:.1f}" font-size="11" text-anchor="middle" transform="rotate(-90 14 {(height - pad_b + pad_t) / 2:.1f})">cost [s]</text>
<text x="{(width + pad_l) / 2:.1f}" y="18" font-size="12" text-anchor="middle">{title}</text>
</svg>
"""
    path.write_text(svg)
    return path


def export(summary: ExperimentSummary, out_dir, formats=("csv",), stem: str = "summary", title: str = "") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for fmt in formats:
        if fmt == "csv":
            paths.append(write_csv(out / f"{stem}.csv", summary))
        elif fmt == "svg":
            paths.append(write_svg(out / f"{stem}.svg", summary, title))
        else:
            raise ValueError(f"unknown export format {fmt!r}")
    return paths


def load_experiments(out_dir) -> list[list[TrialRecord]]:
    paths = sorted(Path(out_dir).glob("results_rep*.jsonl"))
    return [read_results(p)[0] for p in paths]
