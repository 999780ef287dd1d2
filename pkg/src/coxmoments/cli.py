"""Command-line entry point: ``coxmoments {fit,breslow,simulate,experiment}``.

Exit codes: 0 success, 1 input/output or validation error, 2 monotone
likelihood (or a fit that did not converge), 3 singular information.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .breslow import breslow_estimator
from .dgp import SeedSpec, simulate
from .experiments import EXPERIMENTS, ExperimentAbort, ExperimentConfig, InequalityViolation, write_outputs
from .mple import FitResult, MonotoneLikelihoodError, SingularInformationError, SolverConfig, fit
from .partial_likelihood import NoEventsError
from .population import ModelSpec, SpecError
from .survival_data import DataError, load_csv, write_csv

EXIT_OK, EXIT_IO, EXIT_MONOTONE, EXIT_SINGULAR = 0, 1, 2, 3


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _parse_init(text: str | None):
    if text is None:
        return None
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--init expects comma-separated numbers, got {text!r}") from None


def cmd_fit(args) -> int:
    try:
        ds = load_csv(args.input)
        cfg = SolverConfig(tolerance=args.tol, max_iterations=args.max_iter, initial_beta=_parse_init(args.init))
    except (OSError, DataError, ValueError, argparse.ArgumentTypeError) as exc:
        return _fail(EXIT_IO, str(exc))
    try:
        res = fit(ds, cfg)
    except MonotoneLikelihoodError as exc:
        return _fail(EXIT_MONOTONE, str(exc))
    except SingularInformationError as exc:
        return _fail(EXIT_SINGULAR, str(exc))
    except NoEventsError as exc:
        return _fail(EXIT_IO, str(exc))
    except ValueError as exc:
        return _fail(EXIT_IO, str(exc))
    try:
        res.write_json(args.output)
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))
    if not res.converged:
        return _fail(EXIT_MONOTONE, f"did not converge in {res.iterations} iterations (score norm {res.score_norm:.3g})")
    return EXIT_OK


def cmd_breslow(args) -> int:
    try:
        ds = load_csv(args.input)
        res = FitResult.read_json(args.fit)
    except (OSError, DataError, ValueError, KeyError, json.JSONDecodeError) as exc:
        return _fail(EXIT_IO, f"{type(exc).__name__}: {exc}")
    if res.d != ds.d:
        return _fail(EXIT_IO, f"fit has d={res.d} but {args.input} has d={ds.d} covariates")
    if not res.converged:
        return _fail(EXIT_MONOTONE, "fit did not converge; refusing to build the Breslow estimator")
    try:
        breslow_estimator(ds, res.beta_hat).to_csv(args.output)
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        spec = ModelSpec.read_json(args.spec)
    except SpecError as exc:
        return _fail(EXIT_IO, f"invalid spec: {exc}")
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))
    if args.n < 1:
        return _fail(EXIT_IO, "--n must be at least 1")
    ds = simulate(spec, args.n, SeedSpec(args.seed, args.stream))
    try:
        write_csv(ds, args.output)
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))
    return EXIT_OK


def cmd_experiment(args) -> int:
    try:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        cfg = ExperimentConfig.from_dict(doc)
    except SpecError as exc:
        return _fail(EXIT_IO, f"invalid spec: spec.{exc}")
    except (OSError, ValueError, TypeError, json.JSONDecodeError) as exc:
        return _fail(EXIT_IO, f"invalid config: {exc}")
    out_dir = args.out_dir or cfg.out_dir
    if out_dir is None:
        return _fail(EXIT_IO, "no output directory: pass --out-dir or set out_dir in the config")
    try:
        report = EXPERIMENTS[args.kind](cfg, workers=args.workers, progress=not args.quiet)
    except (ExperimentAbort, InequalityViolation, ValueError) as exc:
        return _fail(EXIT_IO, str(exc))
    for path in write_outputs(args.kind, cfg, report, out_dir):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coxmoments", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="maximum partial likelihood fit of a CSV dataset")
    p.add_argument("--input", required=True, help="CSV with header time,status,z1,...,zd")
    p.add_argument("--output", required=True, help="where to write the FitResult JSON")
    p.add_argument("--tol", type=float, default=1e-8, help="tolerance on the score norm (default 1e-8)")
    p.add_argument("--max-iter", type=int, default=50, help="maximum Newton iterations (default 50)")
    p.add_argument("--init", default=None, help="initial beta as comma-separated values (default zeros)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("breslow", help="Breslow cumulative baseline hazard from a fit")
    p.add_argument("--input", required=True, help="CSV dataset the fit was computed on")
    p.add_argument("--fit", required=True, help="FitResult JSON written by 'fit'")
    p.add_argument("--output", required=True, help="where to write the step function CSV (t,value)")
    p.set_defaults(func=cmd_breslow)

    p = sub.add_parser("simulate", help="simulate a dataset from a model spec")
    p.add_argument("--spec", required=True, help="ModelSpec JSON")
    p.add_argument("--n", type=int, required=True, help="number of subjects")
    p.add_argument("--seed", type=int, required=True, help="master seed")
    p.add_argument("--stream", type=int, default=0, help="stream id within the master seed (default 0)")
    p.add_argument("--output", required=True, help="where to write the CSV dataset")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", help="run a Monte Carlo experiment")
    p.add_argument("kind", choices=sorted(EXPERIMENTS), help="which experiment to run")
    p.add_argument("--config", required=True, help="ExperimentConfig JSON (spec, n_grid, p_list, ...)")
    p.add_argument("--out-dir", default=None, help="output directory (overrides out_dir in the config)")
    p.add_argument("--workers", type=int, default=1, help="worker processes; output does not depend on it")
    p.add_argument("--quiet", action="store_true", help="no replication counter on stderr")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    np.seterr(over="ignore", under="ignore")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
