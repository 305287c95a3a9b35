"""Scenario grid: controllers x CAV penetration rates x seeds.

Each cell runs one evaluation episode; DQN cells first train a fresh agent.
Results go to ``episode_metrics.csv`` (one row per episode, training and
evaluation) and ``conflicts.csv`` (one row per conflict event of the
evaluation episodes).
"""
from __future__ import annotations

import concurrent.futures
import configparser
import csv
import dataclasses
import math
import os
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .dqn import AgentConfig, EpisodeLog, load_checkpoint, run_training, save_checkpoint
from .env import EpisodeResult, IntersectionEnv, run_fixed_time, run_greedy
from .network import ConfigError, Movement, WorldConfig
from .ssm import SsmEvent, SsmThresholds

CONTROLLERS = ("fixed", "dqn")
# rows of the evaluation episode carry this episode index
EVAL_EPISODE = -1

EPISODE_COLUMNS = [
    "controller", "pr", "seed", "episode", "cum_neg_reward", "cum_delay_s", "total_conflicts",
    "rear_end", "crossing", "mean_travel_time_s", "vehicles_completed",
]
CONFLICT_COLUMNS = [
    "controller", "pr", "seed", "kind", "veh_a", "class_a", "veh_b", "class_b",
    "t_begin_s", "t_end_s", "min_ttc_s", "threshold_s",
]


class UserError(RuntimeError):
    """A problem the user can fix (missing checkpoint, unwritable directory, bad input)."""


@dataclass(frozen=True)
class ExperimentConfig:
    controllers: tuple[str, ...] = CONTROLLERS
    penetration_rates: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    world: WorldConfig = field(default_factory=WorldConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    ssm: SsmThresholds = field(default_factory=SsmThresholds)
    out_dir: str = "results"
    workers: int = 1

    def __post_init__(self):
        if not self.controllers or not self.penetration_rates or not self.seeds:
            raise ConfigError("controllers, penetration_rates and seeds must be non-empty")
        bad = set(self.controllers) - set(CONTROLLERS)
        if bad:
            raise ConfigError(f"unknown controllers {sorted(bad)}; choose from {list(CONTROLLERS)}")
        if any(not 0.0 <= pr <= 1.0 for pr in self.penetration_rates):
            raise ConfigError("penetration rates must lie in [0, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")


@dataclass(frozen=True)
class MetricsRow:
    controller: str
    pr: float
    seed: int
    episode: int
    cumulative_negative_reward: float
    cumulative_delay: float
    total_conflicts: int
    rear_end_conflicts: int
    crossing_conflicts: int
    mean_travel_time: float
    vehicles_completed: int

    def __post_init__(self):
        if self.total_conflicts != self.rear_end_conflicts + self.crossing_conflicts:
            raise ValueError("total conflicts must equal rear-end plus crossing")

    def as_csv(self) -> list[str]:
        return [
            self.controller, repr(float(self.pr)), str(self.seed), str(self.episode),
            repr(float(self.cumulative_negative_reward)), repr(float(self.cumulative_delay)),
            str(self.total_conflicts), str(self.rear_end_conflicts), str(self.crossing_conflicts),
            repr(float(self.mean_travel_time)), str(self.vehicles_completed),
        ]

    @classmethod
    def from_csv(cls, rec: dict) -> "MetricsRow":
        return cls(
            rec["controller"], float(rec["pr"]), int(rec["seed"]), int(rec["episode"]),
            float(rec["cum_neg_reward"]), float(rec["cum_delay_s"]), int(rec["total_conflicts"]),
            int(rec["rear_end"]), int(rec["crossing"]), float(rec["mean_travel_time_s"]),
            int(rec["vehicles_completed"]),
        )


@dataclass(frozen=True)
class ConflictRow:
    controller: str
    pr: float
    seed: int
    event: SsmEvent

    def as_csv(self) -> list[str]:
        e = self.event
        return [
            self.controller, repr(float(self.pr)), str(self.seed), e.kind.value, str(e.veh_a), e.class_a.value,
            str(e.veh_b), e.class_b.value, repr(float(e.t_begin)), repr(float(e.t_end)),
            repr(float(e.min_ttc)), repr(float(e.threshold_used)),
        ]


@dataclass
class CellResult:
    controller: str
    pr: float
    seed: int
    rows: list[MetricsRow] = field(default_factory=list)
    conflicts: list[ConflictRow] = field(default_factory=list)
    error: Optional[str] = None

    @property
    def evaluation(self) -> Optional[MetricsRow]:
        return next((r for r in self.rows if r.episode == EVAL_EPISODE), None)


def _row(controller: str, pr: float, seed: int, episode: int, res: EpisodeResult) -> MetricsRow:
    rear = res.conflict_count("rear_end")
    cross = res.conflict_count("crossing")
    return MetricsRow(controller, pr, seed, episode, res.cumulative_negative_reward, res.cumulative_delay,
                      rear + cross, rear, cross, res.mean_travel_time, res.vehicles_completed)


def training_base_seed(seed: int) -> int:
    """World seeds of training episodes start here; evaluation uses ``seed`` itself."""
    return 1000 * (seed + 1)


def checkpoint_path(out_dir, pr: float, seed: int) -> Path:
    return Path(out_dir) / "checkpoints" / f"dqn_pr{pr:g}_seed{seed}.txt"


def run_scenario(controller: str, pr: float, seed: int, cfg: ExperimentConfig,
                 checkpoint: Optional[str] = None, train: bool = True,
                 on_episode: Optional[Callable[[EpisodeLog], None]] = None) -> CellResult:
    """Run one grid cell.

    ``fixed`` runs a single episode. ``dqn`` trains ``cfg.agent.episodes``
    episodes (unless ``train`` is false, in which case ``checkpoint`` or the
    default checkpoint path must exist) and then runs one greedy episode.
    """
    world = dataclasses.replace(cfg.world, cav_penetration=pr, seed=seed)
    cell = CellResult(controller, pr, seed)
    if controller == "fixed":
        res = run_fixed_time(world, cfg.ssm)
    elif controller == "dqn":
        path = Path(checkpoint) if checkpoint else checkpoint_path(cfg.out_dir, pr, seed)
        if train:
            env = IntersectionEnv(world, cfg.ssm)

            def log_episode(log: EpisodeLog) -> None:
                cell.rows.append(_row("dqn", pr, seed, log.episode, env.result()))
                if on_episode is not None:
                    on_episode(log)

            agent = dataclasses.replace(cfg.agent, seed=seed)
            trained = run_training(env, agent, training_base_seed(seed), log_episode)
            net = trained.net
            path.parent.mkdir(parents=True, exist_ok=True)
            save_checkpoint(path, net, seed=seed, episode=cfg.agent.episodes - 1)
        else:
            if not path.exists():
                raise UserError(f"no checkpoint at {path}; run 'train' for pr={pr:g} seed={seed} first")
            net, _ = load_checkpoint(path)
        res = run_greedy(world, net, cfg.ssm)
    else:
        raise ConfigError(f"unknown controller {controller!r}")
    cell.rows.append(_row(controller, pr, seed, EVAL_EPISODE, res))
    cell.conflicts = [ConflictRow(controller, pr, seed, e) for e in res.events]
    return cell


def _run_cell(args) -> CellResult:
    controller, pr, seed, cfg = args
    try:
        return run_scenario(controller, pr, seed, cfg)
    except Exception as exc:  # partial-failure policy: record and continue
        cell = CellResult(controller, pr, seed)
        cell.error = f"{type(exc).__name__}: {exc}"
        traceback.print_exc()
        return cell


def grid(cfg: ExperimentConfig) -> list[tuple[str, float, int]]:
    return [(c, pr, s) for c in cfg.controllers for pr in cfg.penetration_rates for s in cfg.seeds]


def sweep(cfg: ExperimentConfig, echo: Callable[[str], None] = print) -> list[CellResult]:
    """Run the whole grid, write the CSV files and print a summary table."""
    out = Path(cfg.out_dir)
    _ensure_dir(out)
    jobs = [(c, pr, s, cfg) for c, pr, s in grid(cfg)]
    if cfg.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            cells = list(pool.map(_run_cell, jobs))
    else:
        cells = [_run_cell(j) for j in jobs]
    for cell in cells:
        _write_cell(out, cell)
    rows = [r for c in cells for r in c.rows]
    conflicts = [e for c in cells for e in c.conflicts]
    if rows:
        export_csv(rows, conflicts, out)
    _write_failures(out, cells)
    table = summarize(cells)
    write_summary(out / "summary.csv", table)
    echo(format_summary(table))
    return cells


def _ensure_dir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UserError(f"output directory {path} is not writable: {exc.strerror or exc}") from exc


def _write_cell(out: Path, cell: CellResult) -> None:
    d = out / "cells" / f"{cell.controller}_pr{cell.pr:g}_seed{cell.seed}"
    d.mkdir(parents=True, exist_ok=True)
    if cell.rows:
        export_csv(cell.rows, cell.conflicts, d)
    if cell.error:
        (d / "ERROR").write_text(cell.error + "\n")


def _write_failures(out: Path, cells: Sequence[CellResult]) -> None:
    path = out / "failed_cells.csv"
    failed = [c for c in cells if c.error]
    if not failed:
        if path.exists():
            path.unlink()
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["controller", "pr", "seed", "error"])
        for c in failed:
            w.writerow([c.controller, repr(float(c.pr)), c.seed, c.error])


def export_csv(rows: Sequence[MetricsRow], conflicts: Sequence[ConflictRow], out_dir) -> tuple[Path, Path]:
    """Write ``episode_metrics.csv`` and ``conflicts.csv`` into ``out_dir``."""
    if not rows:
        raise ValueError("no metrics rows to export")
    out = Path(out_dir)
    _ensure_dir(out)
    metrics_path, conflicts_path = out / "episode_metrics.csv", out / "conflicts.csv"
    with open(metrics_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODE_COLUMNS)
        w.writerows(r.as_csv() for r in rows)
    with open(conflicts_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONFLICT_COLUMNS)
        w.writerows(c.as_csv() for c in conflicts)
    return metrics_path, conflicts_path


def read_metrics(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        return [MetricsRow.from_csv(rec) for rec in csv.DictReader(fh)]


# --- summary -----------------------------------------------------------------------

SUMMARY_COLUMNS = ["controller", "pr", "n_seeds", "cum_delay_s", "total_conflicts", "rear_end", "crossing",
                   "mean_travel_time_s", "failed"]


def summarize(cells: Sequence[CellResult]) -> list[dict]:
    """Mean over seeds of the evaluation rows, per (controller, pr)."""
    groups: dict = {}
    for c in cells:
        groups.setdefault((c.controller, c.pr), []).append(c)
    table = []
    for (controller, pr), cs in groups.items():
        rows = [c.evaluation for c in cs if c.evaluation is not None]

        def mean(attr):
            return float(np.mean([getattr(r, attr) for r in rows])) if rows else math.nan

        table.append({
            "controller": controller, "pr": pr, "n_seeds": len(rows),
            "cum_delay_s": mean("cumulative_delay"), "total_conflicts": mean("total_conflicts"),
            "rear_end": mean("rear_end_conflicts"), "crossing": mean("crossing_conflicts"),
            "mean_travel_time_s": mean("mean_travel_time"), "failed": sum(1 for c in cs if c.error),
        })
    return table


def write_summary(path, table: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for rec in table:
            w.writerow([rec[k] if isinstance(rec[k], str) else repr(rec[k]) for k in SUMMARY_COLUMNS])


def format_summary(table: Sequence[dict]) -> str:
    head = f"{'controller':<10} {'pr':>4} {'seeds':>5} {'delay_s':>10} {'total':>8} {'rear':>8} {'cross':>7} {'tt_s':>7}"
    lines = [head, "-" * len(head)]
    for r in table:
        mark = f"  ERROR x{r['failed']}" if r["failed"] else ""
        lines.append(
            f"{r['controller']:<10} {r['pr']:>4.1f} {r['n_seeds']:>5d} {r['cum_delay_s']:>10.0f} "
            f"{r['total_conflicts']:>8.1f} {r['rear_end']:>8.1f} {r['crossing']:>7.1f} "
            f"{r['mean_travel_time_s']:>7.1f}{mark}"
        )
    return "\n".join(lines)


# --- configuration files ------------------------------------------------------------------

_SECTIONS = {"world": WorldConfig, "agent": AgentConfig, "ssm": SsmThresholds}
_EXPERIMENT_KEYS = {"controllers", "penetration_rates", "seeds", "out_dir", "workers"}


def _parse_value(raw: str, current):
    raw = raw.strip()
    if raw.lower() == "none":
        return None
    if current is None:
        return float(raw)
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        items = [x.strip() for x in raw.split(",") if x.strip()]
        kind = type(current[0]) if current else str
        return tuple(kind(x) for x in items)
    if isinstance(current, dict):  # box path lengths: straight=24, left=30, right=12
        out = dict(current)
        for item in raw.split(","):
            k, _, v = item.partition("=")
            out[Movement(k.strip())] = float(v)
        return out
    return raw


def config_keys() -> dict[str, list[str]]:
    """Settable keys per section, for documentation and CLI flag generation."""
    keys = {"experiment": sorted(_EXPERIMENT_KEYS)}
    for name, cls in _SECTIONS.items():
        keys[name] = [f.name for f in dataclasses.fields(cls)]
    return keys


def apply_overrides(cfg: ExperimentConfig, overrides: dict[tuple[str, str], str]) -> ExperimentConfig:
    """Apply ``{(section, key): raw string}`` on top of ``cfg``."""
    top: dict = {}
    nested: dict = {name: {} for name in _SECTIONS}
    for (section, key), raw in overrides.items():
        try:
            if section == "experiment":
                if key not in _EXPERIMENT_KEYS:
                    raise ConfigError(f"unknown key {key!r} in [experiment]")
                top[key] = _parse_value(raw, getattr(cfg, key))
            elif section in _SECTIONS:
                sub = getattr(cfg, section)
                if key not in {f.name for f in dataclasses.fields(sub)}:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                nested[section][key] = _parse_value(raw, getattr(sub, key))
            else:
                raise ConfigError(f"unknown section [{section}]")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from exc
    for section, values in nested.items():
        if values:
            try:
                top[section] = dataclasses.replace(getattr(cfg, section), **values)
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"[{section}]: {exc}") from exc
    return dataclasses.replace(cfg, **top) if top else cfg


def load_config(path: Optional[str] = None, env: Optional[dict] = None) -> ExperimentConfig:
    """Defaults, then the INI file at ``path``, then the SIM_SEED environment variable.

    SIM_SEED replaces the base seed: seeds become ``SIM_SEED, SIM_SEED+1, ...``
    keeping their count.
    """
    cfg = ExperimentConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise UserError(f"cannot read config {path}: {exc.strerror or exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc.message.splitlines()[0]}") from exc
        overrides = {(s, k): v for s in parser.sections() for k, v in parser.items(s)}
        cfg = apply_overrides(cfg, overrides)
    env = os.environ if env is None else env
    if env.get("SIM_SEED"):
        try:
            base = int(env["SIM_SEED"])
        except ValueError as exc:
            raise ConfigError(f"SIM_SEED must be an integer, got {env['SIM_SEED']!r}") from exc
        cfg = dataclasses.replace(cfg, seeds=tuple(base + i for i in range(len(cfg.seeds))))
    return cfg


def describe(cfg: ExperimentConfig) -> str:
    """Resolved configuration in the INI layout accepted by :func:`load_config`."""

    def fmt(v):
        if isinstance(v, tuple):
            return ", ".join(str(x) for x in v)
        if isinstance(v, dict):
            return ", ".join(f"{k.value}={x:g}" for k, x in v.items())
        return str(v)

    lines = ["[experiment]"] + [f"{k} = {fmt(getattr(cfg, k))}" for k in sorted(_EXPERIMENT_KEYS)]
    for name in _SECTIONS:
        sub = getattr(cfg, name)
        lines += ["", f"[{name}]"] + [f"{f.name} = {fmt(getattr(sub, f.name))}" for f in dataclasses.fields(sub)]
    return "\n".join(lines) + "\n"
