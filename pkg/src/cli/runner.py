import asyncio
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.config import ExperimentConfig
from src.errors import SimulatorError, error_chain
from src.manifold.gaussian import (
    BLOCKS_PER_MICROSTATE,
    GeodesicParams,
    ThetaPoint,
    analytic_geodesic_eval,
    ricci_scalar_at,
)
from src.manifold.oracle import fd_ricci_scalar
from src.services import charts
from src.services.dynamics import (
    GeodesicTrajectory,
    JacobiTrajectory,
    integrate_geodesic,
    integrate_jlc,
    jacobi_fd_oracle,
    jacobi_prefactor,
    lyapunov_estimate,
    max_analytic_deviation,
    oracle_initial_deviation,
)
from src.services.entropy import VolumeSeries, ig_entropy_series, slope_fit
from src.storage import dal
from src.storage.models import (
    RUN_DEGRADED,
    RUN_FAILED,
    RUN_OK,
    GeodesicReport,
    JacobiReport,
    LyapunovReport,
    PrefactorReport,
    RunRecord,
    SlopeReport,
    SweepRow,
)

logger = logging.getLogger(__name__)

# Random curvature sample points: mu uniform, sigma log-uniform.
SAMPLE_MU_RANGE = (-5.0, 5.0)
SAMPLE_SIGMA_RANGE = (0.1, 10.0)


def params_from_config(config: ExperimentConfig) -> GeodesicParams:
    return GeodesicParams(Lambda=config.Lambda, lambda_rate=config.lambda_rate, C=config.C, N=config.N)


def tau_grid_from_config(config: ExperimentConfig) -> np.ndarray:
    config = config.resolve()
    return np.linspace(0.0, config.tau_max, config.tau_samples)


def random_points(n: int, count: int, rng: np.random.Generator) -> List[ThetaPoint]:
    size = BLOCKS_PER_MICROSTATE * n
    lo, hi = np.log(SAMPLE_SIGMA_RANGE)
    return [
        ThetaPoint(rng.uniform(*SAMPLE_MU_RANGE, size), np.exp(rng.uniform(lo, hi, size)))
        for _ in range(count)
    ]


@dataclass(frozen=True, eq=False)
class CurvatureResult:
    ricci: np.ndarray
    ricci_fd: np.ndarray

    @property
    def max_rel_error(self) -> float:
        return float(np.max(np.abs(self.ricci_fd - self.ricci) / np.abs(self.ricci)))


def run_curvature(config: ExperimentConfig, directory: Path) -> CurvatureResult:
    """Closed-form and finite-difference Ricci scalar at random points; writes curvature.csv."""
    rng = np.random.default_rng(config.rng_seed)
    points = random_points(config.N, config.curvature_samples, rng)
    ricci = np.array([ricci_scalar_at(p) for p in points])
    ricci_fd = np.array([fd_ricci_scalar(p) for p in points])
    dal.write_csv(dal.curvature_frame(points, ricci, ricci_fd), Path(directory) / "curvature.csv")
    result = CurvatureResult(ricci, ricci_fd)
    logger.info(f"Curvature N={config.N}: R={ricci[0]:g}, finite-difference max rel error {result.max_rel_error:.3g}")
    return result


def run_geodesic(config: ExperimentConfig, directory: Path) -> GeodesicTrajectory:
    config = config.resolve()
    params = params_from_config(config)
    trajectory = integrate_geodesic(
        analytic_geodesic_eval(params, 0.0),
        config.tau_max,
        rel_tol=config.rel_tol,
        tau_grid=tau_grid_from_config(config),
    )
    dal.write_csv(dal.geodesic_frame(trajectory), Path(directory) / "geodesic.csv")
    return trajectory


def run_entropy(config: ExperimentConfig, directory: Path) -> Tuple[VolumeSeries, SlopeReport]:
    config = config.resolve()
    params = params_from_config(config)
    # S is undefined at tau = 0
    series = ig_entropy_series(params, tau_grid_from_config(config)[1:], quad_points=config.quad_points)
    fit = slope_fit(series.tau_grid, series.entropy, config.fit_window)
    expected = BLOCKS_PER_MICROSTATE * config.N * config.lambda_rate
    report = SlopeReport(
        slope=fit.slope,
        intercept=fit.intercept,
        r_squared=fit.r_squared,
        window=config.fit_window,
        expected=expected,
        ratio=fit.slope / expected,
    )
    dal.write_csv(dal.entropy_frame(series), Path(directory) / "entropy.csv")
    dal.write_json(report.model_dump_json(indent=2), Path(directory) / "entropy_fit.json")
    logger.info(f"Entropy slope N={config.N}, lambda={config.lambda_rate:g}: {fit.slope:.6g} (ratio {report.ratio:.4f})")
    return series, report


def run_jacobi(
    config: ExperimentConfig,
    directory: Path,
    geodesic: Optional[GeodesicTrajectory] = None,
) -> Tuple[JacobiTrajectory, JacobiTrajectory]:
    """JLC field along the numeric geodesic and the finite-difference family oracle on the same grid."""
    config = config.resolve()
    params = params_from_config(config)
    if geodesic is None:
        geodesic = run_geodesic(config, directory)
    jlc = integrate_jlc(geodesic, oracle_initial_deviation(params, config.delta_lambda), rel_tol=config.rel_tol)
    oracle = jacobi_fd_oracle(params, config.delta_lambda, jlc.tau_grid)
    dal.write_csv(dal.jacobi_frame(jlc), Path(directory) / "jacobi.csv")
    dal.write_csv(dal.jacobi_frame(oracle), Path(directory) / "jacobi_oracle.csv")
    return jlc, oracle


def oracle_agreement(jlc: JacobiTrajectory, oracle: JacobiTrajectory, tau_hi: float) -> float:
    """Largest relative intensity discrepancy for tau <= tau_hi."""
    mask = jlc.tau_grid <= tau_hi + 1e-12
    return float(np.max(np.abs(jlc.intensities[mask] - oracle.intensities[mask]) / oracle.intensities[mask]))


def _fit_window(window: Tuple[float, float], tau: np.ndarray) -> Tuple[float, float]:
    """Clips a window to the pre-overflow part of a truncated series."""
    lo, hi = window
    return lo, min(hi, float(tau[-1]))


def run_experiment(config: ExperimentConfig, directory: Optional[Path] = None) -> RunRecord:
    """
    Full pipeline for one (N, lambda): curvature, geodesic, entropy, Jacobi field, fits.
    Errors do not propagate: the record is persisted with status "failed" and the error chain.
    """
    config = config.resolve()
    if directory is None:
        directory = dal.run_directory(config.output_dir, config.N, config.lambda_rate)
    directory = Path(directory)
    started = time.perf_counter()
    logger.info(f"Run N={config.N}, lambda={config.lambda_rate:g} -> {directory}")

    fields: Dict[str, object] = {"config": config, "status": RUN_OK}
    artifacts: Dict[str, str] = {}
    try:
        curvature = run_curvature(config, directory)
        fields["ricci_scalar"] = float(curvature.ricci[0])
        fields["ricci_fd_max_rel_error"] = curvature.max_rel_error
        artifacts["curvature"] = "curvature.csv"

        params = params_from_config(config)
        geodesic = run_geodesic(config, directory)
        fields["geodesic"] = GeodesicReport(
            status=geodesic.status,
            accepted_steps=geodesic.stats.accepted_steps,
            rejected_steps=geodesic.stats.rejected_steps,
            max_error_estimate=geodesic.stats.max_error_estimate,
            max_analytic_error=max_analytic_deviation(geodesic, params),
        )
        artifacts["geodesic"] = "geodesic.csv"

        series, slope = run_entropy(config, directory)
        fields["entropy"] = slope
        artifacts["entropy"] = "entropy.csv"
        artifacts["entropy_fit"] = "entropy_fit.json"

        jlc, oracle = run_jacobi(config, directory, geodesic)
        window = _fit_window(config.lyapunov_window, jlc.tau_grid)
        estimate = lyapunov_estimate(jlc.tau_grid, jlc.intensities, window)
        prefactor = jacobi_prefactor(jlc.tau_grid, jlc.intensities, window, params, config.delta_lambda)
        fields["lyapunov"] = LyapunovReport(estimate=estimate, window=window, ratio=estimate / config.lambda_rate)
        fields["jacobi"] = JacobiReport(
            status=jlc.status,
            accepted_steps=jlc.stats.accepted_steps if jlc.stats else 0,
            rejected_steps=jlc.stats.rejected_steps if jlc.stats else 0,
            final_intensity=float(jlc.intensities[-1]),
            max_oracle_rel_error=oracle_agreement(jlc, oracle, config.lyapunov_window[0]),
        )
        fields["jacobi_prefactor"] = PrefactorReport(
            fitted_rate=prefactor.fitted_rate,
            measured=prefactor.measured,
            analytic=prefactor.analytic,
            block_count_form=prefactor.block_count_form,
        )
        artifacts["jacobi"] = "jacobi.csv"
        artifacts["jacobi_oracle"] = "jacobi_oracle.csv"

        if not (geodesic.ok and jlc.ok):
            fields["status"] = RUN_DEGRADED
            logger.warning(f"Run N={config.N}, lambda={config.lambda_rate:g} degraded: {geodesic.message or jlc.message}")

        if config.emit_svg:
            if charts.entropy_chart(series, config.N, config.lambda_rate, directory / "entropy.svg"):
                artifacts["entropy_svg"] = "entropy.svg"
            if charts.jacobi_chart(jlc, config.lambda_rate, directory / "jacobi.svg"):
                artifacts["jacobi_svg"] = "jacobi.svg"

    except Exception as e:
        logger.error(f"Run N={config.N}, lambda={config.lambda_rate:g} failed: {e}", exc_info=True)
        fields["status"] = RUN_FAILED
        fields["error_chain"] = error_chain(e)

    record = RunRecord(**fields, artifacts=artifacts, duration_seconds=time.perf_counter() - started)
    dal.write_record(record, directory)
    return record


def _run_point(config: ExperimentConfig, n: int, lambda_rate: float) -> RunRecord:
    try:
        run_config = config.for_run(n, lambda_rate)
    except SimulatorError as e:
        logger.error(f"Sweep point N={n}, lambda={lambda_rate:g} rejected: {e}")
        failed_config = config.model_copy(update={"N": n, "lambda_rate": lambda_rate, "sweep_n": None, "sweep_lambda": None})
        record = RunRecord(config=failed_config, status=RUN_FAILED, error_chain=error_chain(e))
        dal.write_record(record, dal.run_directory(config.output_dir, n, lambda_rate))
        return record
    return run_experiment(run_config)


async def run_sweep(config: ExperimentConfig) -> List[RunRecord]:
    """
    Runs the Cartesian product of the sweep lists on a thread pool, one directory
    per run, then writes summary.csv. Failed runs stay in the summary with their status.
    """
    points = config.sweep_points()
    logger.info(f"Sweep: {len(points)} runs on {config.workers} workers")
    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        records = await asyncio.gather(*[
            loop.run_in_executor(pool, _run_point, config, n, lambda_rate)
            for n, lambda_rate in points
        ])
    dal.write_summary([SweepRow.from_record(r) for r in records], Path(config.output_dir) / dal.SUMMARY_FILE)
    failed = sum(r.status == RUN_FAILED for r in records)
    if failed:
        logger.warning(f"Sweep finished with {failed} failed run(s)")
    return list(records)
