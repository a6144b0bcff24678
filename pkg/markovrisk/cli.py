"""
Command-line interface.

Subcommands:
    run       run an experiment from a JSON config or a preset, write CSV/SVG
    theory    print a bound or concentration constant
    priors    lower-bound prior diagnostics as CSV
    selftest  quick oracle-equivalence suite
    serve     start the calculator API

Exit codes: 0 success, 2 validation error, 1 runtime failure.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import ValidationError as PydanticValidationError

from config import Config
from markovrisk.services.utility.errors import ValidationError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2

# Flags that map one-to-one onto ExperimentConfig fields
_OVERRIDE_FIELDS = (
    "name",
    "k",
    "n_min",
    "n_max",
    "n_points",
    "delta",
    "divergences",
    "estimators",
    "trials",
    "master_seed",
    "burn_in",
    "risk_mode",
    "adjust_prediction_constant",
)


# ============================================================================
# PARSER
# ============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="markovrisk",
        description="Markov chain estimation risk: experiments, bounds and lower-bound priors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write CSV/SVG")
    source = run.add_mutually_exclusive_group(required=True)
    source.add_argument("config", nargs="?", help="path to a flat JSON experiment config")
    source.add_argument("--preset", choices=["fig1a", "fig1b", "fig1c", "fig1d"])
    run.add_argument("--out-dir", default=None, help="output directory (default: MARKOVRISK_OUTPUT_DIR)")
    run.add_argument("--workers", type=int, default=None, help="process-pool size (default: RISK_WORKERS)")
    run.add_argument("--no-plot", action="store_true", help="skip the SVG figure")
    run.add_argument("--axes", choices=["loglog", "semilog"], default="loglog")
    run.add_argument("--name")
    run.add_argument("--k", type=int, nargs="+")
    run.add_argument("--n-min", type=int)
    run.add_argument("--n-max", type=int)
    run.add_argument("--n-points", type=int)
    run.add_argument("--delta", type=float)
    run.add_argument("--divergences", nargs="+")
    run.add_argument("--estimators", nargs="+")
    run.add_argument("--trials", type=int)
    run.add_argument("--master-seed", type=int)
    run.add_argument("--burn-in", action=argparse.BooleanOptionalAction, default=None)
    run.add_argument(
        "--risk-mode", choices=["auto", "prediction", "estimation_max", "estimation_weighted"]
    )
    run.add_argument(
        "--adjust-prediction-constant", action=argparse.BooleanOptionalAction, default=None
    )

    theory = sub.add_parser("theory", help="print a bound or concentration constant")
    theory.add_argument(
        "--risk",
        required=True,
        choices=[
            "prediction_kl",
            "estimation_f",
            "estimation_f_weighted",
            "estimation_l2",
            "estimation_l2_weighted",
            "iid_kl",
            "c_delta",
            "concentration_tail",
            "moment",
            "binomial_tail",
        ],
    )
    theory.add_argument("--k", type=int)
    theory.add_argument("--n", type=int)
    theory.add_argument("--delta", type=float)
    theory.add_argument("--pi-star", type=float)
    theory.add_argument("--curvature", type=float, default=None)
    theory.add_argument("--divergence", help="loss token supplying f''(1), e.g. hellinger")
    theory.add_argument("--side", choices=["lower", "upper", "both"], default="upper")
    theory.add_argument("--adjust-prediction", action="store_true")
    theory.add_argument("--t", type=float, help="deviation for concentration_tail")
    theory.add_argument("--m", type=int, help="moment order, or trials for binomial_tail")
    theory.add_argument("--p", type=float, help="success probability for binomial_tail")
    theory.add_argument("--epsilon", type=float)

    priors = sub.add_parser("priors", help="lower-bound prior diagnostics as CSV")
    priors.add_argument("--kind", choices=["prediction", "estimation"], default="prediction")
    priors.add_argument("--k", type=int, required=True)
    priors.add_argument("--n", type=int, nargs="+", required=True)
    priors.add_argument("--v-set", type=float, nargs="+", help="explicit parameter grid instead of V_n")
    priors.add_argument("--pi-star", type=float)
    priors.add_argument("--epsilon", type=float, default=0.1)
    priors.add_argument("--delta", type=float, default=0.0)
    priors.add_argument("--divergence", default="kl")
    priors.add_argument("--estimator", default="add(0.5)")
    priors.add_argument("--trials", type=int, default=0, help="Monte Carlo trials for the prior risk (0 skips)")
    priors.add_argument("--seed", type=int, default=None)
    priors.add_argument("--workers", type=int, default=None)
    priors.add_argument("--csv", dest="csv_path", help="write to this file instead of stdout")

    sub.add_parser("selftest", help="run the oracle-equivalence suite")

    serve = sub.add_parser("serve", help="start the calculator API")
    serve.add_argument("--host", default="0.0.0.0")
    serve.add_argument("--port", type=int, default=5000)

    return parser


# ============================================================================
# COMMANDS
# ============================================================================


def _overrides(args: argparse.Namespace) -> Dict:
    return {
        field: getattr(args, field)
        for field in _OVERRIDE_FIELDS
        if getattr(args, field, None) is not None
    }


def cmd_run(args: argparse.Namespace) -> int:
    from markovrisk.services.experiment.experiment_service import load_config, preset, run_experiment
    from markovrisk.services.experiment.report_service import emit_csv, emit_plot

    overrides = _overrides(args)
    config = preset(args.preset, overrides) if args.preset else load_config(args.config, overrides)

    rows = run_experiment(config, workers=args.workers)
    out_dir = Path(args.out_dir or Config.OUTPUT_DIR)
    csv_path = emit_csv(rows, out_dir / f"{config.name}.csv")
    print(csv_path)
    if not args.no_plot:
        print(emit_plot(rows, out_dir / f"{config.name}.svg", axes=args.axes))
    return EXIT_OK


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [f"--{name.replace('_', '-')}" for name in names if getattr(args, name) is None]
    if missing:
        raise ValidationError(f"'{args.risk}' needs {', '.join(missing)}")


def cmd_theory(args: argparse.Namespace) -> int:
    from markovrisk.services.divergence.divergence_service import parse_divergence
    from markovrisk.services.theory.theory_service import (
        BoundQuery,
        binomial_tail,
        bound,
        c_delta,
        concentration_tail,
        moment_bound,
    )

    if args.risk == "c_delta":
        _require(args, "delta")
        print(c_delta(args.delta))
        return EXIT_OK
    if args.risk == "concentration_tail":
        _require(args, "n", "delta", "t")
        print(repr(concentration_tail(args.n, args.delta, args.t)))
        return EXIT_OK
    if args.risk == "moment":
        _require(args, "m", "n", "delta")
        print(repr(moment_bound(args.m, args.n, args.delta)))
        return EXIT_OK
    if args.risk == "binomial_tail":
        _require(args, "m", "p", "epsilon")
        print(repr(binomial_tail(args.m, args.p, args.epsilon)))
        return EXIT_OK

    _require(args, "k", "n")
    curvature = args.curvature
    if args.divergence:
        spec = parse_divergence(args.divergence)
        if spec.is_f_divergence:
            curvature = spec.curvature
    fields = {"k": args.k, "n": args.n, "delta": args.delta, "pi_star": args.pi_star, "risk": args.risk}
    if curvature is not None:
        fields["curvature"] = curvature

    sides = ["lower", "upper"] if args.side == "both" else [args.side]
    for side in sides:
        value = bound(BoundQuery(side=side, **fields), adjust_prediction=args.adjust_prediction)
        print(f"{side},{value!r}" if len(sides) > 1 else repr(value))
    return EXIT_OK


def _prediction_prior_rows(args: argparse.Namespace) -> List[Dict]:
    from markovrisk.services.risk.lower_bound_service import (
        PredictionPrior,
        prediction_prior_partial_bayes_risk,
    )
    from markovrisk.services.theory.theory_service import BoundQuery, bound

    rows = []
    for n in args.n:
        prior = PredictionPrior.create(args.k, n, args.v_set)
        risk = prediction_prior_partial_bayes_risk(prior)
        lower = bound(BoundQuery(k=args.k, n=n, risk="prediction_kl", side="lower"))
        rows.append(
            {
                "k": args.k,
                "n": n,
                "v_set": " ".join(repr(v) for v in prior.v_set),
                "partial_bayes_risk": repr(risk),
                "lower_bound": repr(lower),
                "ratio": repr(risk / lower),
            }
        )
    return rows


def _estimation_prior_rows(args: argparse.Namespace) -> List[Dict]:
    from markovrisk.services.divergence.divergence_service import parse_divergence
    from markovrisk.services.markov.estimator_service import parse_estimator
    from markovrisk.services.risk.lower_bound_service import (
        EstimationPrior,
        estimation_prior_bayes_gap,
    )
    from markovrisk.services.theory.theory_service import BoundQuery, bound_pair

    if args.pi_star is None:
        raise ValidationError("--kind estimation needs --pi-star")
    spec = parse_divergence(args.divergence)
    if not spec.is_f_divergence:
        raise ValidationError("--kind estimation needs an f-divergence")
    estimator = parse_estimator(args.estimator)
    seed = Config.MASTER_SEED if args.seed is None else args.seed

    rows = []
    for n in args.n:
        prior = EstimationPrior(
            k=args.k, n=n, delta=args.delta, pi_star=args.pi_star, epsilon=args.epsilon
        )
        lower, upper = bound_pair(
            BoundQuery(k=args.k, n=n, pi_star=args.pi_star, curvature=spec.curvature, risk="estimation_f")
        )
        row = {
            "k": args.k,
            "n": n,
            "pi_star": repr(args.pi_star),
            "epsilon": repr(args.epsilon),
            "n_prime": repr(prior.n_prime),
            "radius": repr(prior.radius),
            "min_entry": repr(prior.min_entry),
            "lower_bound": repr(lower),
            "upper_bound": repr(upper),
            "prior_risk": "",
            "prior_risk_stderr": "",
        }
        if args.trials:
            risk = estimation_prior_bayes_gap(
                prior, estimator, spec, args.trials, (seed, n), workers=args.workers
            )
            row["prior_risk"] = repr(risk.value)
            row["prior_risk_stderr"] = repr(risk.stderr)
        rows.append(row)
    return rows


def cmd_priors(args: argparse.Namespace) -> int:
    rows = _prediction_prior_rows(args) if args.kind == "prediction" else _estimation_prior_rows(args)

    handle = open(args.csv_path, "w", encoding="utf-8", newline="") if args.csv_path else sys.stdout
    try:
        writer = csv.DictWriter(handle, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if args.csv_path:
            handle.close()
    return EXIT_OK


def cmd_selftest(args: argparse.Namespace) -> int:
    from markovrisk.services.experiment.selftest_service import run_selftest

    results = run_selftest()
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"[{status}] {result.name}: {result.detail}")

    passed = sum(result.passed for result in results)
    print(f"Self-test results: {passed}/{len(results)} checks passed")
    return EXIT_OK if passed == len(results) else EXIT_RUNTIME


def cmd_serve(args: argparse.Namespace) -> int:
    from markovrisk import create_app

    app = create_app()
    print("Starting markovrisk API...")
    print(f"Debug mode: {Config.DEBUG}")
    app.run(host=args.host, port=args.port, debug=Config.DEBUG)
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "theory": cmd_theory,
    "priors": cmd_priors,
    "selftest": cmd_selftest,
    "serve": cmd_serve,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, dispatch, and map failures to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_VALIDATION if e.code else EXIT_OK

    Config.setup_logging()
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, PydanticValidationError) as e:
        logger.error(f"Validation error: {e}")
        return EXIT_VALIDATION
    except Exception as e:
        logger.error(f"Command '{args.command}' failed: {e}", exc_info=True)
        return EXIT_RUNTIME
