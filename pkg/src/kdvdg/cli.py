"""Command line entry point: ``kdvdg {conserve,eoc,estimate,selftest}``.

Exit codes: 0 success, 1 selftest failure, 2 solver divergence,
3 configuration or parity error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import harness
from .exact import PeriodicityError
from .projections import ParityError
from .stepper import NewtonDivergence

EXIT_OK, EXIT_SELFTEST, EXIT_DIVERGED, EXIT_CONFIG = 0, 1, 2, 3

log = logging.getLogger("kdvdg")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("run configuration (flags override --config)")
    g.add_argument("--config", help="INI file with a [run] section")
    g.add_argument("--problem", help="linear | mkdv4 | custom:ALPHA,M")
    g.add_argument("--degree", type=int, help="polynomial degree q >= 1")
    g.add_argument("--cells", type=int, help="number of cells N (default: h close to 0.4)")
    g.add_argument("--dt", type=float, help="time step tau")
    g.add_argument("--tfinal", type=float, help="final time T")
    g.add_argument("--sigma", type=float, help="penalty parameter (default 10 q^2)")
    g.add_argument("--newton-tol", type=float, dest="newton_tol", help="Newton residual tolerance")
    g.add_argument("--domain-mode", dest="domain_mode", choices=harness.DOMAIN_MODES)
    g.add_argument("--initial", choices=harness.INITIAL, help="initial data family")
    g.add_argument("--projection", choices=harness.PROJECTIONS, help="initial projection (default l2)")
    g.add_argument("--k", type=float, help="sn modulus (default 0.9)")
    g.add_argument("--wave", type=int, help="wave number l of the linear sinusoid")
    g.add_argument("--constants", help="analysis constants, e.g. ca2cb2=1,creg=1")
    g.add_argument("--quotient", choices=("centred", "backward"), help="time difference quotient in the bound")
    g.add_argument("--out", help="CSV output path (default: stdout)")
    g.add_argument("--json", dest="json_out", help="also write a JSON mirror here")
    g.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="kdvdg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("conserve", parents=[common], help="mass/momentum/energy deviations per step")
    e = sub.add_parser("eoc", parents=[common], help="convergence table over mesh levels")
    e.add_argument("--levels", help="comma separated cell counts (default 25,50,100,200)")
    e.add_argument("--coupling", choices=tuple(harness.COUPLINGS), help="tau/h: fine=0.1, equal=1, coarse=10")
    e.add_argument("--paper-coupling", action="store_true", dest="paper_coupling",
                   help="shorthand for --coupling coarse (tau = 10 h)")
    e.add_argument("--even-levels", action="store_true", help="keep even cell counts as given")
    e.add_argument("--workers", type=int, help="parallel processes for the levels")
    e.add_argument("--sh-checks", action="store_true", dest="sh_checks", help="require S_h parity on all levels")
    s = sub.add_parser("estimate", parents=[common], help="estimator stream and effectivity")
    s.add_argument("--sh-checks", action="store_true", dest="sh_checks", help="evaluate the S_h identity at t=0")
    sub.add_parser("selftest", help="quick structural checks")
    return p


_CONFIG_KEYS = ("problem", "degree", "cells", "dt", "tfinal", "sigma", "newton_tol", "domain_mode", "initial",
                "projection", "k", "wave", "constants", "quotient", "out", "json_out", "levels", "coupling",
                "workers", "sh_checks")


def _config(args) -> harness.RunConfig:
    overrides = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
    if overrides.get("sh_checks") is False:
        overrides["sh_checks"] = None
    if getattr(args, "paper_coupling", False):
        overrides["coupling"] = "coarse"
    if getattr(args, "even_levels", False):
        overrides["odd_levels"] = False
    return harness.load_config(args.config, overrides)


def _emit(cfg, payload, columns, rows, streamed=False):
    if not streamed:
        if cfg.out:
            with open(cfg.out, "w") as fh:
                harness.write_csv(rows, columns, fh)
        else:
            harness.write_csv(rows, columns, sys.stdout)
    if cfg.json_out:
        harness.write_json({"config": harness.config_dict(cfg), **payload}, cfg.json_out)


def _run_streamed(cfg, study):
    if cfg.out:
        with open(cfg.out, "w") as fh:
            return study(cfg, fh)
    return study(cfg, sys.stdout)


def cmd_conserve(cfg) -> int:
    res = _run_streamed(cfg, harness.conserve_study)
    _emit(cfg, res, res["columns"], res["rows"], streamed=True)
    print("# " + harness.summary_line(res["summary"]), file=sys.stderr)
    return _report_error(res["summary"])


def cmd_estimate(cfg) -> int:
    res = _run_streamed(cfg, harness.estimate_study)
    _emit(cfg, res, res["columns"], res["rows"], streamed=True)
    print("# " + harness.summary_line(res["summary"]), file=sys.stderr)
    return _report_error(res["summary"])


def _report_error(summary) -> int:
    err = summary.get("error")
    if err:
        print(f"error: solver diverged at step {err['step']}: {err['message']}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_eoc(cfg) -> int:
    try:
        table = harness.eoc_study(cfg)
    except NewtonDivergence as exc:
        partial = getattr(exc, "partial", None)
        if partial is not None:
            _emit(cfg, {"rows": partial.rows}, partial.columns, partial.rows)
        print(f"error: level failed at step {exc.step_index}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    _emit(cfg, {"rows": table.rows, "columns": table.columns}, table.columns, table.rows)
    print(harness.text_table(table.rows, table.columns), file=sys.stderr)
    return EXIT_OK


def cmd_selftest() -> int:
    results = harness.selftest()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_SELFTEST


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "selftest":
        return cmd_selftest()
    try:
        cfg = _config(args)
        return {"conserve": cmd_conserve, "eoc": cmd_eoc, "estimate": cmd_estimate}[args.command](cfg)
    except (harness.ConfigError, ParityError, PeriodicityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NewtonDivergence as exc:
        print(f"error: solver diverged at step {exc.step_index}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the final flush
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
