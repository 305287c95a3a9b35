"""Command-line entry point: ``cavsignal {train,eval,sweep,validate-config}``.

Settings are resolved as defaults < ``--config`` INI file < ``SIM_SEED`` <
command-line flags. Every INI key ``[section] key`` has a matching flag
``--section-key`` (underscores become dashes).
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path
from typing import Optional, Sequence

from .experiment import (
    CONTROLLERS,
    ExperimentConfig,
    UserError,
    apply_overrides,
    config_keys,
    describe,
    export_csv,
    format_summary,
    load_config,
    run_scenario,
    summarize,
    sweep,
)
from .network import ConfigError


def _flag(section: str, key: str) -> str:
    return f"--{section}-{key.replace('_', '-')}"


def _dest(section: str, key: str) -> str:
    return f"override__{section}__{key}"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--pr", help="CAV penetration rate; sweep accepts a comma-separated list")
    common.add_argument("--seed", type=int, help="cell seed (train/eval) or base seed (sweep)")
    common.add_argument("--episodes", type=int, help="training episodes per DQN agent")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="parallel grid cells (sweep)")
    overrides = common.add_argument_group("configuration overrides")
    for section, keys in config_keys().items():
        for key in keys:
            overrides.add_argument(_flag(section, key), dest=_dest(section, key), metavar="VALUE",
                                   help=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="cavsignal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train one DQN agent and evaluate it greedily")
    ev = sub.add_parser("eval", parents=[common], help="evaluate one cell from a saved checkpoint")
    ev.add_argument("--controller", choices=CONTROLLERS, default="dqn")
    ev.add_argument("--checkpoint", help="checkpoint file (default: <out>/checkpoints/...)")
    sub.add_parser("sweep", parents=[common], help="run the full controller x penetration x seed grid")
    sub.add_parser("validate-config", parents=[common], help="check a configuration and print it resolved")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config)
    raw = {}
    for name, value in vars(args).items():
        if name.startswith("override__") and value is not None:
            _, section, key = name.split("__")
            raw[(section, key)] = value
    if args.episodes is not None:
        raw[("agent", "episodes")] = str(args.episodes)
    if args.out is not None:
        raw[("experiment", "out_dir")] = args.out
    if args.workers is not None:
        raw[("experiment", "workers")] = str(args.workers)
    if args.pr is not None:
        raw[("experiment", "penetration_rates")] = args.pr
    cfg = apply_overrides(cfg, raw)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seeds=tuple(args.seed + i for i in range(len(cfg.seeds))))
    return cfg


def _single_cell(cfg: ExperimentConfig) -> tuple[float, int]:
    if len(cfg.penetration_rates) != 1:
        raise UserError("train/eval run one cell; pass a single --pr")
    return cfg.penetration_rates[0], cfg.seeds[0]


def _train(cfg: ExperimentConfig) -> None:
    pr, seed = _single_cell(cfg)

    def echo(log):
        print(f"episode {log.episode:3d}  eps {log.epsilon:.3f}  neg_reward {log.cumulative_negative_reward:.0f}"
              f"  delay {log.cumulative_delay:.0f}", flush=True)

    cell = run_scenario("dqn", pr, seed, cfg, on_episode=echo)
    _report(cfg, [cell])


def _eval(cfg: ExperimentConfig, controller: str, checkpoint: Optional[str]) -> None:
    pr, seed = _single_cell(cfg)
    cell = run_scenario(controller, pr, seed, cfg, checkpoint=checkpoint, train=False)
    _report(cfg, [cell])


def _report(cfg: ExperimentConfig, cells) -> None:
    rows = [r for c in cells for r in c.rows]
    conflicts = [e for c in cells for e in c.conflicts]
    paths = export_csv(rows, conflicts, cfg.out_dir)
    print(format_summary(summarize(cells)))
    print("wrote " + ", ".join(str(p) for p in paths))


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "validate-config":
            sys.stdout.write(describe(cfg))
        elif args.command == "train":
            _train(cfg)
        elif args.command == "eval":
            _eval(cfg, args.controller, args.checkpoint)
        else:
            cells = sweep(cfg)
            failed = [c for c in cells if c.error]
            if failed:
                print(f"error: {len(failed)} of {len(cells)} cells failed; see "
                      f"{Path(cfg.out_dir) / 'failed_cells.csv'}", file=sys.stderr)
                return 1
    except (ConfigError, UserError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: invalid setting: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
