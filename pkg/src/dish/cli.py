"""
Command line entry point.

    dish run --config cfg.json [--output DIR]
    dish tune --config cfg.json [--method NAME ...]
    dish verify [--full]
    dish reproduce setup1|setup2 [--output DIR] [--seed N]

Exit status is 0 on success, 2 when a method diverged on every grid point,
3 on a bad config or bad arguments, and 1 when ``verify`` finds a failing
check.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .core import DivergenceError, UpdateSchedule
from .harness import ConfigError, ExperimentConfig, build_instance, run_suite, setup1_config, setup2_config, tune

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_DIVERGED = 2
EXIT_CONFIG = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _print_rows(rows, out):
    header = f"{'method':<14}{'a':>10}{'b':>10}{'mu':>10}{'iters':>14}{'rel err':>12}{'slope':>11}{'r2':>8}"
    print(header, file=out)
    for r in rows:
        def num(v, fmt):
            width = int(fmt.split(".")[0])
            return format(v, fmt) if isinstance(v, (int, float)) else "-".rjust(width)
        print(f"{r.method:<14}{num(r.a, '10.4g')}{num(r.b, '10.4g')}{num(r.mu, '10.4g')}"
              f"{str(r.iterations):>14}{num(r.final_rel_err, '12.3e')}{num(r.slope, '11.4f')}"
              f"{num(r.r2, '8.4f')}", file=out)


def _suite(config, out):
    results = run_suite(config)
    rows = [row for row, _ in results]
    _print_rows(rows, out)
    if config.output:
        print(f"outputs written to {config.output}", file=out)
    return EXIT_DIVERGED if any(r.status.startswith("failed") for r in rows) else EXIT_OK


def cmd_run(args, out):
    config = ExperimentConfig.load(args.config)
    if args.output:
        config.output = args.output
    return _suite(config, out)


def cmd_reproduce(args, out):
    config = (setup1_config if args.setup == "setup1" else setup2_config)(seed=args.seed)
    config.output = args.output or f"{args.setup}-output"
    return _suite(config, out)


def cmd_tune(args, out):
    config = ExperimentConfig.load(args.config)
    instance = build_instance(config)
    methods = config.methods
    if args.method:
        known = {m["name"]: m for m in methods}
        missing = [m for m in args.method if m not in known]
        if missing:
            raise ConfigError(f"unknown method(s) {missing}")
        methods = [known[m] for m in args.method]
    status = EXIT_OK
    report = {}
    for m in methods:
        schedule = None if m["kind"] == "extra" else UpdateSchedule.from_spec(m, instance.n)
        try:
            res = tune(instance, m, config.tuning, schedule)
        except DivergenceError as exc:
            report[m["name"]] = {"status": f"failed: {exc}"}
            status = EXIT_DIVERGED
            continue
        if isinstance(res.steps, float):
            params = {"alpha": res.steps}
        else:
            params = {"a": float(res.steps.a[0]), "b": float(res.steps.b[0]), "mu": float(res.steps.mu)}
        report[m["name"]] = dict(params, iterations=res.iterations, final_rel_err=res.final_error,
                                 status=res.flag)
    print(json.dumps(report, indent=2), file=out)
    return status


def cmd_verify(args, out):
    from .verify import run_checks

    results = run_checks(full=args.full, report=lambda line: print(line, file=out, flush=True))
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


def build_parser():
    p = _Parser(prog="dish", description="Hybrid gradient/Newton primal-dual consensus experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="tune and run every method of a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--output")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("tune", help="grid-search stepsizes and print them as JSON")
    t.add_argument("--config", required=True)
    t.add_argument("--method", action="append")
    t.set_defaults(func=cmd_tune)

    v = sub.add_parser("verify", help="run the acceptance checks")
    v.add_argument("--full", action="store_true", help="include the slow convergence and tuning checks")
    v.set_defaults(func=cmd_verify)

    rp = sub.add_parser("reproduce", help="run one of the two reference experiments")
    rp.add_argument("setup", choices=["setup1", "setup2"])
    rp.add_argument("--output")
    rp.add_argument("--seed", type=int, default=0)
    rp.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
