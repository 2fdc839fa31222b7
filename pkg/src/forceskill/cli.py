"""Command-line entry point: ``forceskill run | report | replay``."""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .harness import (
    build_setup,
    default_domain,
    export,
    load_experiments,
    read_results,
    run_repetitions,
    summarize,
)
from .plant import SimulationIntegrityError
from .rollout import run_rollout, write_log_csv

EXIT_CONFIG = 2
EXIT_FAULT = 3
SEED_ENV = "FORCESKILL_SEED"


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Learn peg-in-hole meta parameters in simulation."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="YAML or JSON experiment config.")
@click.option("--seed", type=int, envvar=SEED_ENV, help=f"Base seed (also read from ${SEED_ENV}).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), help="Output directory.")
@click.option("--repetitions", type=int, help="Override the number of experiments.")
@click.option("--budget", type=int, help="Override the trial budget.")
def run(config_path, seed, out_dir, repetitions, budget):
    """Run (or resume) the configured experiments."""
    try:
        cfg = load_config(config_path) if config_path else ExperimentConfig()
        changes = {k: v for k, v in (("seed", seed), ("repetitions", repetitions), ("budget", budget)) if v is not None}
        if out_dir is not None:
            changes["out_dir"] = out_dir
        if changes:
            cfg = cfg.replace(**changes)
        default_domain(cfg.domain, cfg.scenario)
    except (ConfigError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        experiments = run_repetitions(cfg)
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    faults = sum(r.faulted for e in experiments for r in e)
    s = summarize(experiments)
    click.echo(
        f"{cfg.scenario}/{cfg.learner}: {s.n_experiments} experiment(s), "
        f"{len(s.trial)} trials, final best-so-far {s.best_so_far[-1]:.3f} s"
    )
    if faults:
        click.echo(f"{faults} trial(s) hit a simulation-integrity fault", err=True)
        sys.exit(EXIT_FAULT)


@main.command()
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--format", "fmt", type=click.Choice(["csv", "svg"]), multiple=True, default=("csv",))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), help="Defaults to the input directory.")
def report(in_dir, fmt, out_dir):
    """Summarize the results files of a run directory."""
    experiments = [e for e in load_experiments(in_dir)]
    if not experiments:
        click.echo(f"no results files in {in_dir}", err=True)
        sys.exit(EXIT_CONFIG)
    s = summarize(experiments)
    title = Path(in_dir).name
    cfg_path = Path(in_dir) / "config.json"
    if cfg_path.exists():
        cfg = json.loads(cfg_path.read_text())
        title = f"{cfg.get('scenario', '')} / {cfg.get('learner', '')}"
    for p in export(s, out_dir or in_dir, fmt, title=title):
        click.echo(str(p))


@main.command()
@click.option("--record", "record_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--index", type=int, default=None, help="Trial index (default: the best trial).")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Defaults to config.json beside the record file.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), help="Where trajectory CSVs go.")
def replay(record_path, index, config_path, out_dir):
    """Re-simulate one recorded trial and dump its trajectories."""
    record_path = Path(record_path)
    try:
        cfg_file = Path(config_path) if config_path else record_path.parent / "config.json"
        cfg = load_config(cfg_file)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    records, _ = read_results(record_path)
    if not records:
        click.echo(f"no trials in {record_path}", err=True)
        sys.exit(EXIT_CONFIG)
    rec = min(records, key=lambda r: r.mean_cost) if index is None else next((r for r in records if r.index == index), None)
    if rec is None:
        click.echo(f"no trial with index {index}", err=True)
        sys.exit(EXIT_CONFIG)
    setup = build_setup(cfg, rec.candidate)
    out = Path(out_dir) if out_dir else record_path.parent / "replay"
    out.mkdir(parents=True, exist_ok=True)
    faulted = False
    for j, offset in enumerate(cfg.offsets):
        rng = np.random.default_rng([rec.seed, j])
        try:
            r = run_rollout(setup, offset, rng, cfg.penalty_weight, record=True)
        except SimulationIntegrityError as exc:
            click.echo(f"run {j}: {exc}", err=True)
            faulted = True
            continue
        path = out / f"trial{rec.index:03d}_run{j}.csv"
        write_log_csv(path, r.log)
        match = "" if abs(r.cost - rec.costs[j]) < 1e-9 else f" (recorded {rec.costs[j]:.3f})"
        click.echo(f"run {j}: {r.reason} cost {r.cost:.3f} s{match} -> {path}")
    if faulted:
        sys.exit(EXIT_FAULT)
