"""Experiment configuration: schema, defaults and YAML/JSON loading.

Schema (every key optional)::

    scenario: peg                  # puzzle | key | peg
    scenario_overrides: {clearance: 5.0e-5}
    learner: cmaes                 # lhs | cmaes | pso | bo
    learner_settings: {popsize: 5, generations: 15, sigma0: 0.1}
    budget: 75
    repetitions: 10
    seed: 0
    penalty_weight: 1.0
    offsets_mm: [[1, 1], [1, -1], [-1, 1], [-1, -1]]
    controller: {limits: {K_max: [2000, 200]}, gains: {kappa: 0.01}, initial_stiffness: 0.25}
    plant: {contact_stiffness: 50000.0, wrench_noise_sigma: [0.25, 0.025]}
    skill: {roi: 0.05, t_max: 15.0}
    domain: {beta_t: [0, 100000]}
    out_dir: results
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

DEFAULT_OFFSETS_MM = ((1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0))
NO_OFFSETS_MM = ((0.0, 0.0),) * 4

LEARNER_DEFAULTS = {
    "lhs": {"n_samples": 75},
    "cmaes": {"popsize": 5, "generations": 15, "sigma0": 0.1},
    "pso": {"particles": 25, "episodes": 3, "c1": 2.0, "c2": 2.0},
    "bo": {"n_init": 5, "budget": 75},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "peg"
    scenario_overrides: dict = field(default_factory=dict)
    learner: str = "cmaes"
    learner_settings: dict = field(default_factory=dict)
    budget: int = 75
    repetitions: int = 10
    seed: int = 0
    penalty_weight: float = 1.0
    offsets_mm: tuple | None = None
    controller: dict = field(default_factory=dict)
    plant: dict = field(default_factory=dict)
    skill: dict = field(default_factory=dict)
    domain: dict = field(default_factory=dict)
    out_dir: str = "results"

    def __post_init__(self):
        if self.scenario not in ("puzzle", "key", "peg"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.learner not in LEARNER_DEFAULTS:
            raise ConfigError(f"unknown learner {self.learner!r}")
        if int(self.budget) < 1:
            raise ConfigError("budget must be at least one trial")
        if int(self.repetitions) < 1:
            raise ConfigError("repetitions must be at least one")
        if not self.penalty_weight >= 0:
            raise ConfigError("penalty weight must be non-negative")
        if self.offsets_mm is not None:
            offs = tuple(tuple(float(v) for v in o) for o in self.offsets_mm)
            if not offs or any(len(o) != 2 for o in offs):
                raise ConfigError("offsets_mm must be a list of (x, y) pairs")
            object.__setattr__(self, "offsets_mm", offs)
        object.__setattr__(self, "budget", int(self.budget))
        object.__setattr__(self, "repetitions", int(self.repetitions))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def offsets(self) -> tuple:
        """Task-frame offsets in metres, one per run of a trial."""
        mm = self.offsets_mm
        if mm is None:
            mm = NO_OFFSETS_MM if self.scenario == "key" else DEFAULT_OFFSETS_MM
        return tuple((x * 1e-3, y * 1e-3) for x, y in mm)

    @property
    def learner_kwargs(self) -> dict:
        out = dict(LEARNER_DEFAULTS[self.learner])
        out.update(self.learner_settings)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["offsets_mm"] is not None:
            d["offsets_mm"] = [list(o) for o in d["offsets_mm"]]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    return ExperimentConfig.from_dict(data or {})
