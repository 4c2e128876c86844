import argparse
import asyncio
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

from src.config import ExperimentConfig, load_experiment_config
from src.errors import ConfigError, ConvergenceError, ManifoldDomainError, VerificationError
from src.cli import runner
from src.cli.verify import verify
from src.logging_setup import setup_logging
from src.services.dynamics import lyapunov_estimate
from src.services.maxent import GridSpec, MomentConstraints, discretized_gaussian, maxent_solve
from src.storage import dal
from src.storage.models import RUN_OK, SweepRow

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_VERIFICATION = 3


def _float_list(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment JSON document")
    common.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="random seed for sampled points and Monte Carlo")
    common.add_argument("--svg", action="store_true", default=None, help="also write SVG line charts")
    common.add_argument("--n", type=int, dest="N", help="number of microstates N")
    common.add_argument("--lambda-rate", type=float, help="geodesic rate lambda")
    common.add_argument("--Lambda", type=float, help="geodesic constant Lambda")
    common.add_argument("--tau-max", type=float, help="end of the tau range (default 40/lambda)")
    common.add_argument("--tau-samples", type=int, help="number of tau samples")
    common.add_argument("--rel-tol", type=float, help="integrator relative tolerance")
    common.add_argument("--delta-lambda", type=float, help="Jacobi family spacing in lambda")
    common.add_argument("--workers", type=int, help="parallel sweep workers")

    parser = argparse.ArgumentParser(
        prog="infogeo",
        description="Curvature, entropy growth and Jacobi field divergence on the Gaussian statistical manifold",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("curvature", parents=[common], help="closed-form vs finite-difference Ricci scalar")
    sub.add_parser("geodesic", parents=[common], help="numeric geodesic, geodesic.csv")
    sub.add_parser("jacobi", parents=[common], help="Jacobi field intensity, jacobi.csv")
    sub.add_parser("entropy", parents=[common], help="information-geometric entropy series, entropy.csv")

    maxent = sub.add_parser("maxent", parents=[common], help="maximum-entropy distribution on a grid, maxent.csv")
    maxent.add_argument("--mean", type=float, default=0.0)
    maxent.add_argument("--stddev", type=float, default=1.0)
    maxent.add_argument("--lower", type=float, default=-10.0)
    maxent.add_argument("--upper", type=float, default=10.0)
    maxent.add_argument("--nodes", type=int, default=2001)
    maxent.add_argument("--tolerance", type=float, default=1e-10)

    sub.add_parser("run", parents=[common], help="full experiment for one (N, lambda)")
    sweep = sub.add_parser("sweep", parents=[common], help="Cartesian sweep over N and lambda, summary.csv")
    sweep.add_argument("--sweep-n", type=_int_list, help="comma separated N values")
    sweep.add_argument("--sweep-lambda", type=_float_list, help="comma separated lambda values")

    verify_cmd = sub.add_parser("verify", parents=[common], help="run all oracle cross-checks")
    verify_cmd.add_argument("--samples", type=int, default=100, help="random points per check")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides: Dict[str, Any] = {
        "N": args.N,
        "lambda_rate": args.lambda_rate,
        "Lambda": args.Lambda,
        "tau_max": args.tau_max,
        "tau_samples": args.tau_samples,
        "rel_tol": args.rel_tol,
        "delta_lambda": args.delta_lambda,
        "workers": args.workers,
        "output_dir": args.out,
        "rng_seed": args.seed,
        "emit_svg": args.svg,
        "sweep_n": getattr(args, "sweep_n", None),
        "sweep_lambda": getattr(args, "sweep_lambda", None),
    }
    return load_experiment_config(args.config, overrides)


def _print_table(frame: pd.DataFrame) -> None:
    print(frame.to_string(index=False))


def cmd_curvature(config: ExperimentConfig) -> int:
    result = runner.run_curvature(config, config.output_dir)
    print(f"ricci_scalar={result.ricci[0]:g} fd_max_rel_error={result.max_rel_error:.3e}")
    return EXIT_OK


def cmd_geodesic(config: ExperimentConfig) -> int:
    trajectory = runner.run_geodesic(config, config.output_dir)
    stats = trajectory.stats
    print(
        f"status={trajectory.status} accepted={stats.accepted_steps} rejected={stats.rejected_steps} "
        f"max_speed_drift={stats.max_error_estimate:.3e}"
    )
    return EXIT_OK if trajectory.ok else EXIT_NUMERICAL


def cmd_jacobi(config: ExperimentConfig) -> int:
    config = config.resolve()
    jlc, oracle = runner.run_jacobi(config, config.output_dir)
    lo, hi = config.lyapunov_window
    estimate = lyapunov_estimate(jlc.tau_grid, jlc.intensities, (lo, min(hi, float(jlc.tau_grid[-1]))))
    agreement = runner.oracle_agreement(jlc, oracle, lo)
    print(f"status={jlc.status} lyapunov={estimate:.6g} oracle_max_rel_error={agreement:.3e}")
    return EXIT_OK if jlc.ok else EXIT_NUMERICAL


def cmd_entropy(config: ExperimentConfig) -> int:
    _, report = runner.run_entropy(config, config.output_dir)
    print(report.model_dump_json(indent=2))
    return EXIT_OK


def cmd_maxent(config: ExperimentConfig, args: argparse.Namespace) -> int:
    grid = GridSpec(args.lower, args.upper, args.nodes)
    solved = maxent_solve(grid, MomentConstraints(args.mean, args.stddev), tolerance=args.tolerance)
    reference = discretized_gaussian(solved.grid, args.mean, args.stddev)
    path = dal.write_csv(dal.maxent_frame(solved, reference), Path(config.output_dir) / "maxent.csv")
    alpha, beta = solved.multipliers
    print(f"alpha={alpha:.10g} beta={beta:.10g} iterations={solved.iterations} -> {path}")
    return EXIT_OK


def cmd_run(config: ExperimentConfig) -> int:
    record = runner.run_experiment(config)
    print(record.model_dump_json(indent=2))
    return EXIT_OK if record.status == RUN_OK else EXIT_NUMERICAL


def cmd_sweep(config: ExperimentConfig) -> int:
    records = asyncio.run(runner.run_sweep(config))
    _print_table(dal.summary_frame(SweepRow.from_record(r) for r in records))
    return EXIT_OK if all(r.status == RUN_OK for r in records) else EXIT_NUMERICAL


def cmd_verify(config: ExperimentConfig, args: argparse.Namespace) -> int:
    report = verify(seed=config.rng_seed, samples=args.samples)
    dal.write_verification(report, Path(config.output_dir) / dal.VERIFY_FILE)
    _print_table(pd.DataFrame([c.model_dump() for c in report.checks]))
    if not report.passed:
        names = ", ".join(c.name for c in report.failures)
        raise VerificationError(f"{len(report.failures)} check(s) failed: {names}")
    return EXIT_OK


def dispatch(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    command = args.command
    if command == "maxent":
        return cmd_maxent(config, args)
    if command == "verify":
        return cmd_verify(config, args)
    if command == "sweep":
        return cmd_sweep(config)
    handlers = {
        "curvature": cmd_curvature,
        "geodesic": cmd_geodesic,
        "jacobi": cmd_jacobi,
        "entropy": cmd_entropy,
        "run": cmd_run,
    }
    return handlers[command](config)


def main(argv: Optional[List[str]] = None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return dispatch(args)
    except (ConfigError, ManifoldDomainError) as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_VALIDATION
    except ConvergenceError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except VerificationError as e:
        logger.error(f"Verification failed: {e}")
        return EXIT_VERIFICATION
