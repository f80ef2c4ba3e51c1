"""Command-line front end: ``sbmguard {demo,pcc,maze,enumerate}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import maze, models, pcc
from .core import SBMError
from .guards import InvalidDistribution
from .nn import NetworkError
from .oracle import StateSpaceExceeded, enumerate_runs

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
U64 = 2**64

log = logging.getLogger("sbmguard")


class ConfigError(Exception):
    pass


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not 0 <= value < U64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return value


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sbmguard", description="Scenario-based guards for neural-network controllers.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed_default=0):
        p.add_argument("--seed", type=_seed, default=None, help=f"64-bit seed (default {seed_default})")
        p.add_argument("--out", type=Path, default=None, help="directory for CSV/JSONL outputs")

    sub.add_parser("demo", help="replay the small classifier override examples")

    p = sub.add_parser("pcc", help="run the congestion-control harness")
    common(p)
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--guard-style", choices=pcc.GUARD_STYLES)
    p.add_argument("--policy", help="'heuristic' or path to a network JSON file")
    p.add_argument("--yield", dest="yield_policy", help="fixed:R | step:D,F | expdecay:A,F")
    p.add_argument("--restore", help="immediate | slowstart[:INITIAL]")

    p = sub.add_parser("maze", help="run navigation episodes")
    common(p)
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--episodes", type=_positive_int)
    p.add_argument("--guard", help="comma-separated: " + ",".join(maze.GUARD_NAMES))
    p.add_argument("--guard-style", choices=maze.GUARD_STYLES)
    p.add_argument("--policy", help="heuristic:TEMP or path to a network JSON file")

    p = sub.add_parser("enumerate", help="list the runs of a bundled model")
    common(p)
    p.add_argument("--model", choices=sorted(models.BUNDLED), default="corridor")
    p.add_argument("--depth", type=int, default=8)
    return parser


def _read_json(path: Path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def write_outputs(result, out_dir: Path, command: str, seed: int) -> list[Path]:
    """Write deterministic artifacts named ``{command}-{seed}.csv`` / ``.jsonl``."""
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise OSError(f"output directory {out_dir} does not exist")
    files: dict[str, str] = {}
    if isinstance(result, pcc.PccTrace):
        files["csv"] = result.to_csv()
        files["jsonl"] = result.trace.to_jsonl()
    elif isinstance(result, (list, tuple)) and command == "maze":
        if not result:
            raise ValueError("no episode results to write")
        files["csv"] = maze.results_csv(result)
        files["jsonl"] = json.dumps(maze.aggregate_metrics(result).as_dict(), sort_keys=True) + "\n"
    elif isinstance(result, (list, tuple)) and command == "enumerate":
        files["jsonl"] = "".join(json.dumps([str(e) for e in run]) + "\n" for run in result)
    else:
        raise TypeError(f"nothing to write for {type(result).__name__}")
    paths = []
    for ext, text in files.items():
        path = out_dir / f"{command}-{seed}.{ext}"
        try:
            path.write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
        paths.append(path)
    return paths


# -- subcommands ------------------------------------------------------------


def cmd_demo(args) -> int:
    x = (1, 0)
    unguarded, _ = models.classify([x])
    blocking, _ = models.classify([x], models.FORCE_Y1)
    modified, _ = models.classify([x], models.FORCE_Y1_IF_Y2_ABOVE_1)
    print(f"input (1,0): unguarded {unguarded[0]}, guarded {blocking[0]}")
    print(f"input (1,0): unguarded {unguarded[0]}, modifier-guarded {modified[0]}")
    other, _ = models.classify([(0, 1)], models.FORCE_Y1)
    print(f"input (0,1): guarded {other[0]} (rule inactive)")
    return EXIT_OK


def pcc_config(args) -> pcc.PccConfig:
    data = _read_json(args.config) if args.config else {}
    if args.guard_style:
        data["guard_style"] = args.guard_style
    if args.policy:
        data["policy"] = args.policy
    if args.seed is not None:
        data["seed"] = args.seed
    pol = dict(data.get("policies", {}))
    if args.yield_policy:
        pol["yield"] = args.yield_policy
    if args.restore:
        pol["restore"] = args.restore
    data["policies"] = pol
    try:
        cfg = pcc.config_from_dict(data)
        pcc.resolve_policy(cfg.policy)
    except (pcc.ConfigError, NetworkError, OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def cmd_pcc(args) -> int:
    cfg = pcc_config(args)
    result = pcc.simulate_config(cfg)
    print(result.to_csv(), end="")
    if args.out is not None:
        for path in write_outputs(result, args.out, "pcc", cfg.seed):
            log.info("wrote %s", path)
    return EXIT_OK


def maze_settings(args) -> maze.RunSettings:
    data = _read_json(args.config) if args.config else {}
    overrides = {"episodes": args.episodes, "guards": args.guard, "guard_style": args.guard_style,
                 "policy": args.policy, "seed": args.seed}
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return maze.settings_from_dict(data, args.config.parent if args.config else None)
    except (maze.WorldError, NetworkError, OSError, ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_maze(args) -> int:
    s = maze_settings(args)
    results = s.run()
    metrics = maze.aggregate_metrics(results)
    print(",".join(metrics.as_dict()))
    print(",".join("" if v is None else f"{v:g}" for v in metrics.as_dict().values()))
    if args.out is not None:
        for path in write_outputs(results, args.out, "maze", s.seed):
            log.info("wrote %s", path)
    return EXIT_OK


def cmd_enumerate(args) -> int:
    if not 0 <= args.depth <= 12:
        raise ConfigError("depth must lie in [0, 12]")
    runs = enumerate_runs(models.BUNDLED[args.model](), args.depth)
    for run in runs:
        print(" ".join(str(e) for e in run))
    if args.out is not None:
        for path in write_outputs(runs, args.out, "enumerate", args.seed or 0):
            log.info("wrote %s", path)
    return EXIT_OK


COMMANDS = {"demo": cmd_demo, "pcc": cmd_pcc, "maze": cmd_maze, "enumerate": cmd_enumerate}


def run_command(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("SBM_GUARD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "out", None) is not None and not args.out.is_dir():
            raise ConfigError(f"output directory {args.out} does not exist")
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"sbmguard: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SBMError, InvalidDistribution, StateSpaceExceeded, OSError, ValueError) as exc:
        print(f"sbmguard: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
