"""Command line interface.

Exit status: 0 on success, 1 on a configuration or usage error, 2 on a
numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path as FsPath

import numpy as np
from threadpoolctl import threadpool_limits

from . import scenarios as sc
from .abxf import ABXFError
from .gravity import ExpressionError, SignatureError
from .rays import InconsistencyError, UnderdeterminedError, read_measurements_csv, recover_fluxes
from .scattering import ForwardSingularityError, UnsupportedOrderError, amplitude_table
from .solver import SolverError
from .spectra import TorusOperator, torus_spectrum

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2

NUMERICAL_ERRORS = (SolverError, InconsistencyError, UnderdeterminedError, SignatureError,
                    np.linalg.LinAlgError, FloatingPointError, ArithmeticError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _emit(report, out_dir, stream):
    if out_dir is not None:
        sc.write_report(report, out_dir)
    stream.write(sc.report_text(report))
    if out_dir is None:
        stream.write(sc.report_json(report))


def cmd_run(args, stream):
    cfg = sc.load_config(args.config, seed=args.seed, out_dir=args.out)
    report = sc.run_scenario(cfg, write=False)
    _emit(report, cfg.out_dir, stream)


def cmd_gravity(args, stream):
    cfg = sc.load_config(args.config, seed=args.seed, out_dir=args.out)
    if cfg.kind != "gravity_check":
        raise sc.ConfigError(f"expected a gravity_check scenario, got {cfg.kind!r}")
    _emit(sc.run_scenario(cfg, write=False), cfg.out_dir, stream)


def cmd_flux(args, stream):
    try:
        ms = read_measurements_csv(args.measurements)
    except (OSError, KeyError, ValueError) as exc:
        raise sc.ConfigError(f"cannot read measurements: {exc}") from None
    if not ms:
        raise sc.ConfigError("no measurements in file")
    n = args.n_obstacles or len(ms[0].winding)
    rec = recover_fluxes(ms, n, tol=args.tol)
    report = {"kind": "flux", "candidates": [list(c.values) for c in rec.candidates],
              "residual": rec.residual, "n_measurements": len(ms)}
    _emit(report, args.out, stream)


def cmd_synth(args, stream):
    raw = {"version": 1, "kind": "synth", "field": {"path": str(FsPath(args.field).resolve())},
           "support": {"center": list(args.center), "radius": args.radius}, "split": args.split}
    cfg = sc.ScenarioConfig.from_dict(raw, out_dir=args.out)
    _emit(sc.run_scenario(cfg, write=False), cfg.out_dir, stream)


def _csv_out(args, header, rows, stream):
    lines = [",".join(header)] + [",".join(repr(float(v)) if not isinstance(v, int) else str(v) for v in r)
                                  for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        out = FsPath(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    stream.write(text)


def cmd_spectrum(args, stream):
    op = TorusOperator((args.alpha1, args.alpha2), cutoff=args.cutoff)
    vals = torus_spectrum(op, args.n)
    _csv_out(args, ["index", "eigenvalue"], [(k + 1, v) for k, v in enumerate(vals)], stream)


def cmd_amplitude(args, stream):
    th = np.linspace(-math.pi, math.pi, args.n_theta)
    th = th[np.abs(th) > 1e-9]
    _csv_out(args, ["theta", "re_a", "im_a", "abs_a_squared"], amplitude_table(th, args.alpha), stream)


def build_parser():
    p = _Parser(prog="ablab", description="Aharonov-Bohm numerical laboratory")
    p.add_argument("--seed", type=int, default=None, help="seed for randomized placements")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    r = sub.add_parser("run", help="run a scenario from a JSON configuration")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory")
    r.add_argument("--seed", type=int, default=None, dest="seed_sub")
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("flux", help="recover fluxes from a measurements CSV")
    f.add_argument("measurements")
    f.add_argument("--n-obstacles", type=int, default=None)
    f.add_argument("--tol", type=float, default=1e-6)
    f.add_argument("--out", default=None)
    f.set_defaults(func=cmd_flux)

    s = sub.add_parser("synth", help="compactly supported potential for an ABXF field")
    s.add_argument("--field", required=True)
    s.add_argument("--center", type=float, nargs=2, default=(0.0, 0.0))
    s.add_argument("--radius", type=float, required=True)
    s.add_argument("--split", action="store_true", help="allow net flux (point-flux tail plus core)")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("spectrum", help="lowest torus eigenvalues as CSV")
    e.add_argument("--alpha1", type=float, required=True)
    e.add_argument("--alpha2", type=float, required=True)
    e.add_argument("--cutoff", type=int, default=8)
    e.add_argument("--n", type=int, default=10)
    e.add_argument("--out", default=None, help="CSV file")
    e.set_defaults(func=cmd_spectrum)

    a = sub.add_parser("amplitude", help="scattering amplitude table as CSV")
    a.add_argument("--alpha", type=float, required=True)
    a.add_argument("--n-theta", type=int, default=100)
    a.add_argument("--out", default=None, help="CSV file")
    a.set_defaults(func=cmd_amplitude)

    g = sub.add_parser("gravity", help="run a gravity_check scenario")
    g.add_argument("config")
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_gravity)
    return p


def main(argv=None, stream=None) -> int:
    stream = stream or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        # --help
        return EXIT_OK if not exc.code else EXIT_CONFIG
    if getattr(args, "seed_sub", None) is not None:
        args.seed = args.seed_sub
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        limit = sc.thread_limit()
        with threadpool_limits(limits=limit):
            args.func(args, stream)
    except (sc.ConfigError, ABXFError, ExpressionError, ForwardSingularityError, UnsupportedOrderError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
