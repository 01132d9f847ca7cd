"""Command line front end: ``urans-fem {run,rates,check,mms,ode-oracle,geo}``.

Exit status: 0 success, 1 a failed check or run, 2 bad configuration or
missing artifacts.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import io as rio
from .config import ConfigError, dump_config, dump_study, load_config, load_study
from .diagnostics import check_statistics
from .mesh import offset_circles_geo

log = logging.getLogger("urans_fem")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _config_error(exc: ConfigError) -> int:
    for name, msg in exc.fields.items():
        print(f"config error: {name}: {msg}", file=sys.stderr)
    return EXIT_USAGE


def cmd_run(args) -> int:
    from .solver import SolveError, run_transient

    path = Path(args.config)
    try:
        config = load_config(path)
        config.validate(path.parent)
    except ConfigError as exc:
        return _config_error(exc)
    if args.dry_run:
        print(f"{path}: valid ({config.n_steps} steps)")
        return EXIT_OK
    out = Path(args.output or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(config, out / "config.yaml")
    try:
        result = run_transient(config, out, base_dir=path.parent)
    except (SolveError, FloatingPointError) as exc:
        print(f"run failed: {exc}; last good state in {out / 'final_state.npz'}", file=sys.stderr)
        return EXIT_FAIL
    k_msg = "k never initialized" if result.k_init is None else f"k(t_star) = {result.k_init:.6e}"
    print(f"{result.final.n} steps to t = {result.final.t:.6g}; {k_msg}; output in {out}")
    return EXIT_OK


def cmd_rates(args) -> int:
    from . import verify

    out = Path(args.output) if args.output else None
    if args.synthetic:
        for order in (1, 2, 3):
            tables = [("time", verify.synthetic_time_table(order)),
                      ("space", verify.synthetic_space_table(order))]
            for kind, table in tables:
                if (kind == "time" and args.space) or (kind == "space" and args.time):
                    continue
                print(table.to_text())
                if out:
                    table.write(out, f"synthetic_{kind}_p{order}")
        return EXIT_OK
    if not args.config:
        print("rates: --config is required unless --synthetic is given", file=sys.stderr)
        return EXIT_USAGE
    path = Path(args.config)
    try:
        study = load_study(path)
        study.validate(path.parent)
        out = out or Path(study.run.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        dump_study(study, out / "study.yaml")
        if args.space:
            table = verify.space_rate_study(study, out, paper_scale=args.paper_scale)
        else:
            table = verify.time_rate_study(study, out, paper_scale=args.paper_scale)
    except ConfigError as exc:
        return _config_error(exc)
    print(table.to_text())
    return EXIT_OK


def cmd_check(args) -> int:
    run_dir = Path(args.run_dir)
    try:
        rows, meta = rio.read_stats(run_dir / "stats.csv")
    except rio.ArtifactError as exc:
        print(f"check: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not rows:
        print(f"check: {run_dir / 'stats.csv'} has no rows", file=sys.stderr)
        return EXIT_USAGE
    results = check_statistics(rows, meta)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    summary = {
        "run_dir": str(run_dir),
        "passed": all(r.passed for r in results),
        "checks": {r.name: {"passed": r.passed, "detail": r.detail,
                            "value": None if math.isnan(r.value) else float(r.value)}
                   for r in results},
    }
    (run_dir / "check.json").write_text(json.dumps(summary, indent=2) + "\n")
    return EXIT_OK if summary["passed"] else EXIT_FAIL


def cmd_mms(args) -> int:
    from . import verify

    out = Path(args.output) if args.output else None
    failed = False
    poly = verify.mms_polynomial_reproduction()
    ok = max(poly.values()) <= 1e-10
    failed |= not ok
    print(f"{'PASS' if ok else 'FAIL'}  polynomial reproduction: "
          + ", ".join(f"{k} {v:.2e}" for k, v in poly.items()))
    studies = []
    if not args.temporal:
        studies.append(("mms_space", verify.mms_spatial_study(), {"l2": 3.0, "h1": 2.0}))
    if not args.spatial:
        studies.append(("mms_time", verify.mms_temporal_study(), {"max_l2": 1.0, "int_h1_sq": 1.0}))
    for stem, table, expected in studies:
        print(table.to_text())
        if out:
            table.write(out, stem)
        for col, target in expected.items():
            rate = table.rates[col][-1]
            ok = abs(rate - target) <= 0.2
            failed |= not ok
            print(f"{'PASS' if ok else 'FAIL'}  {stem} {col}: order {rate:.2f} (expected {target:g} +- 0.2)")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_ode_oracle(args) -> int:
    from .verify import ode_oracle_suite

    results = ode_oracle_suite()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def cmd_geo(args) -> int:
    text = offset_circles_geo(args.lc)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _fraction(text: str) -> float:
    from fractions import Fraction

    return float(Fraction(text))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="urans-fem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a transient simulation")
    p.add_argument("--config", required=True, help="run configuration (YAML)")
    p.add_argument("--output", help="output directory (default: output_dir from the config)")
    p.add_argument("--dry-run", action="store_true", help="validate the configuration only")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("rates", help="self-convergence study in time or space")
    p.add_argument("--config", help="study configuration (YAML)")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--time", action="store_true", help="time study (default)")
    mode.add_argument("--space", action="store_true", help="space study")
    p.add_argument("--paper-scale", action="store_true", help="allow meshes finer than lc = 1/30")
    p.add_argument("--synthetic", action="store_true", help="rate tables of exact power-law data")
    p.add_argument("--output", help="study directory")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("check", help="re-verify the invariants of a finished run")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("mms", help="manufactured-solution convergence tests")
    which = p.add_mutually_exclusive_group()
    which.add_argument("--spatial", action="store_true", help="spatial study only")
    which.add_argument("--temporal", action="store_true", help="temporal study only")
    p.add_argument("--output", help="directory for rate tables")
    p.set_defaults(func=cmd_mms)

    p = sub.add_parser("ode-oracle", help="k updates against closed-form solutions")
    p.set_defaults(func=cmd_ode_oracle)

    p = sub.add_parser("geo", help="print the GMSH recipe for the offset-circles domain")
    p.add_argument("--lc", type=_fraction, default=1 / 16, help="target mesh size (e.g. 1/36)")
    p.add_argument("--output", help="write to this file instead of stdout")
    p.set_defaults(func=cmd_geo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
