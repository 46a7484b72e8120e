"""Command-line entry point: ``nlplap {verify,solve,design,consistency,localize}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .experiments import (ConfigError, RunConfig, all_passed, run_consistency, run_design,
                          run_localize, run_solve, run_verify, write_json)
from .state import ConvergenceError

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_CHECK = 0, 2, 3, 4

COMMANDS = {
    "solve": run_solve,
    "design": run_design,
    "consistency": run_consistency,
    "localize": run_localize,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nlplap", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("verify", *COMMANDS):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file with any subset of the config groups")
        p.add_argument("--out", help="output directory (default: output.dir of the config)")
        p.add_argument("--p", type=float)
        p.add_argument("--delta", type=float)
        p.add_argument("--h-ratio", type=float, dest="h_ratio")
        p.add_argument("--alpha", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--deltas", help="comma separated sweep, e.g. 0.2,0.1,0.05")
        if name == "verify":
            p.add_argument("--corrupt-cnorm", type=float, default=1.0, metavar="FACTOR",
                           help="multiply the kernel constant by FACTOR (fault injection)")
    return parser


def overrides_from(args) -> dict:
    problem = {k: getattr(args, k) for k in ("p", "delta", "h_ratio", "alpha")
               if getattr(args, k) is not None}
    out: dict = {}
    if problem:
        out["problem"] = problem
    if args.seed is not None:
        out["seed"] = args.seed
    if args.deltas:
        try:
            out["sweep"] = {"deltas": [float(v) for v in args.deltas.split(",") if v.strip()]}
        except ValueError as exc:
            raise ConfigError(f"bad --deltas: {exc}") from exc
    if args.out:
        out["output"] = {"dir": args.out}
    return out


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config, overrides_from(args))
        out = Path(cfg["output"]["dir"])
        if args.command == "verify":
            payload = run_verify(cfg, c_scale=args.corrupt_cnorm)
            write_json(out / "verify.json", payload)
        else:
            payload = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for row in payload["results"]:
        print(f"{'PASS' if row['pass'] else 'FAIL'}  {row['name']}: {row['value']:.6g}")
    print(json.dumps({"config_hash": payload["config_hash"], "passed": all_passed(payload)}))
    return EXIT_OK if all_passed(payload) else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
