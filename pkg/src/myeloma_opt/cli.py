"""Command-line entry point: ``myeloma-opt <subcommand>``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, default_config_text, load_config
from .dynamics import ValidationError
from .integrator import IntegrationError
from .optimizers.result import METHODS
from .regimens import load_regimen
from .runner import run_scenario, simulate_to_csv, table_from_runs


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    regimen = load_regimen(args.regimen)
    out = Path(args.out)
    path = out / "trajectory.csv" if out.suffix.lower() != ".csv" else out
    G = tuple(args.G) if args.G else None
    simulate_to_csv(cfg, regimen, path, G)
    print(f"wrote {path}")
    return 0


def _cmd_optimize(args) -> int:
    cfg = load_config(args.config)
    methods = METHODS if args.method == "all" else (
        "approximation" if args.method == "approx" else args.method,)
    if args.workers:
        cfg.workers = args.workers
    table, code = run_scenario(cfg, methods, args.out)
    print(table.to_text(), end="")
    return code


def _cmd_table(args) -> int:
    table = table_from_runs(args.runs)
    print(table.to_text(), end="")
    if args.csv:
        table.write_csv(args.csv)
    return 0


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    sc = cfg.scenario
    print(f"ok: horizon={sc.horizon} period={sc.period} x0={sc.x0} "
          f"G vectors={len(cfg.G_list)} methods={','.join(cfg.methods)}")
    return 0


def _cmd_init(args) -> int:
    text = default_config_text()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="myeloma-opt",
                                 description="Simulate and optimise myeloma combination-therapy regimens.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate one regimen and write the trajectory CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--regimen", required=True, help="regimen file (.json/.yaml or .csv dose table)")
    s.add_argument("--out", required=True, help="output directory or .csv path")
    s.add_argument("--G", nargs=3, type=float, help="weights for the running_integral column")
    s.set_defaults(func=_cmd_simulate)

    o = sub.add_parser("optimize", help="run optimizers for every G vector in the config")
    o.add_argument("--config", required=True)
    o.add_argument("--method", default="all",
                   choices=["constant", "piecewise", "optimal", "approx", "approximation", "all"])
    o.add_argument("--out", default=None, help="output directory (default: config output_dir)")
    o.add_argument("--workers", type=int, default=None)
    o.set_defaults(func=_cmd_optimize)

    t = sub.add_parser("table", help="rebuild the results table from a runs directory")
    t.add_argument("--runs", required=True)
    t.add_argument("--csv", default=None)
    t.set_defaults(func=_cmd_table)

    v = sub.add_parser("validate-config", help="parse and validate a config file")
    v.add_argument("config")
    v.set_defaults(func=_cmd_validate)

    i = sub.add_parser("init-config", help="write a config with every default spelled out")
    i.add_argument("--out", default=None)
    i.set_defaults(func=_cmd_init)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except IntegrationError as exc:
        print(f"integration failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
