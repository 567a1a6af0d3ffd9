"""Command-line entry point."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import experiment as ex
from .fusion import OptimizerError
from .graph import GraphError
from .radio import ScenarioError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ASSERT = 0, 1, 2, 3

log = logging.getLogger("linbp")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config (default: bundled five-node scenario)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--slots", type=int, help="override the evaluation slot count")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--method", action="append",
                        help=f"restrict to a method, repeatable ({', '.join(ex.METHODS)})")
    common.add_argument("--strict", action="store_true",
                        help="reject unknown config keys and enforce output assertions")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="linbp",
                                description="Cooperative spectrum sensing with linear BP.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="dump a simulated sensing window as CSV")
    sub.add_parser("roc", parents=[common], help="per-node (far, pd) for every method and alpha")
    sub.add_parser("far-sweep", parents=[common],
                   help="FAR of tau0 BP and calibrated linear BP over the alpha grid")
    sub.add_parser("learn", parents=[common], help="blind weight learning report (JSON)")
    sub.add_parser("calibrate", parents=[common],
                   help="blind weights and calibrated thresholds (JSON)")
    sub.add_parser("validate-convergence", parents=[common],
                   help="contraction certificates of trained weights (JSON)")
    return p


def _emit(text: str, out):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load(args):
    cfg = ex.load_config(args.config, strict=args.strict, seed=args.seed, slots=args.slots)
    if args.method:
        bad = [m for m in args.method if m not in ex.METHODS]
        if bad:
            raise ex.ConfigError(f"unknown method(s): {', '.join(bad)}")
        cfg = dataclasses.replace(cfg, methods=tuple(args.method))
    return cfg


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
    except (ex.ConfigError, ScenarioError, GraphError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG

    code = EXIT_OK
    try:
        if args.command == "simulate":
            _emit(ex.to_csv(ex.simulate_rows(cfg)), args.out)
        elif args.command == "roc":
            _emit(ex.to_csv(ex.run_roc(cfg)), args.out)
        elif args.command == "far-sweep":
            rows = ex.run_far_sweep(cfg)
            _emit(ex.to_csv(rows), args.out)
            bad = ex.far_violations(rows)
            if bad:
                for r in bad:
                    log.warning("calibrated FAR %.4f above band at alpha=%g node %d",
                                r["far"], r["alpha"], r["node"])
                if args.strict:
                    code = EXIT_ASSERT
        elif args.command == "learn":
            _emit(ex.to_json(ex.learn_report(cfg)), args.out)
        elif args.command == "calibrate":
            _emit(ex.to_json(ex.calibrate_report(cfg)), args.out)
        elif args.command == "validate-convergence":
            report = ex.validate_convergence(cfg)
            _emit(ex.to_json(report), args.out)
            certified = all(v["certified"] for v in report.values() if isinstance(v, dict))
            if args.strict and not certified:
                code = EXIT_ASSERT
    except (ArithmeticError, OptimizerError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    return code


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
