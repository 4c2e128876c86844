"""
Release gate: every closed form against an independent numeric oracle.
Failures are report content, never exceptions; the CLI maps them to exit code 3.
"""
import logging
from typing import Callable, List, Sequence, Tuple

import numpy as np

from src.errors import SimulatorError, error_chain
from src.manifold.gaussian import (
    GeodesicParams,
    ThetaPoint,
    all_coordinate_planes,
    analytic_geodesic_eval,
    christoffel_at,
    geodesic_ode_residual,
    geodesic_rate_derivative,
    metric_at,
    ricci_scalar_at,
    sectional_curvature_at,
)
from src.manifold.oracle import (
    QuadratureSpec,
    fd_christoffel,
    fd_ricci_scalar,
    fd_sectional_curvature,
    fisher_quadrature_report,
    region_volume_quadrature,
    riemann_symmetry_residuals,
)
from src.services.dynamics import (
    integrate_geodesic,
    integrate_jlc,
    jacobi_fd_oracle,
    max_analytic_deviation,
    oracle_initial_deviation,
)
from src.services.entropy import region_volume
from src.services.maxent import GridSpec, MomentConstraints, discretized_gaussian, maxent_solve
from src.storage.models import CheckResult, VerificationReport

logger = logging.getLogger(__name__)

CHRISTOFFEL_COMPONENTS = {
    "gamma_mu_musigma": "Gamma^mu_{mu sigma}",
    "gamma_sigma_mumu": "Gamma^sigma_{mu mu}",
    "gamma_sigma_sigmasigma": "Gamma^sigma_{sigma sigma}",
}

CURVATURE_NS = (1, 2, 5, 10)
RATES = (0.5, 1.0, 2.0)
SQRT8 = float(np.sqrt(8.0))


def _check(name: str, tolerance: float, measured: float, detail: str = "") -> CheckResult:
    passed = bool(np.isfinite(measured) and measured <= tolerance)
    return CheckResult(name=name, tolerance=tolerance, measured=float(measured), passed=passed, detail=detail)


def _random_points(rng: np.random.Generator, n: int, count: int, sigma_range=(0.1, 10.0)) -> List[ThetaPoint]:
    lo, hi = np.log(sigma_range)
    size = 3 * n
    return [ThetaPoint(rng.uniform(-5.0, 5.0, size), np.exp(rng.uniform(lo, hi, size))) for _ in range(count)]


def check_fisher_metric(rng: np.random.Generator, samples: int) -> List[CheckResult]:
    spec = QuadratureSpec(node_count=40)
    worst_diag = worst_off = 0.0
    for point in _random_points(rng, 1, samples):
        report = fisher_quadrature_report(point, spec)
        exact = metric_at(point)
        for quad, ref, m in zip(report.blocks, exact, report.matrices):
            worst_diag = max(
                worst_diag,
                abs(quad.g_mumu - ref.g_mumu) / ref.g_mumu,
                abs(quad.g_sigmasigma - ref.g_sigmasigma) / ref.g_sigmasigma,
            )
            worst_off = max(worst_off, abs(m[0, 1]) / ref.g_mumu)
    return [
        _check("fisher_quadrature_diagonal", 1e-10, worst_diag, f"Gauss-Hermite, 40 nodes, {samples} points"),
        _check("fisher_quadrature_off_diagonal", 1e-10, worst_off, "relative to g_mumu"),
    ]


def check_christoffel(rng: np.random.Generator, samples: int) -> CheckResult:
    errors = {key: 0.0 for key in CHRISTOFFEL_COMPONENTS}
    for point in _random_points(rng, 1, samples):
        closed = christoffel_at(point)
        numeric = fd_christoffel(point)
        for key in errors:
            ref = getattr(numeric, key)
            rel = np.max(np.abs(getattr(closed, key) - ref) / np.abs(ref))
            errors[key] = max(errors[key], float(rel))
    worst = max(errors, key=errors.get)
    detail = f"worst component {CHRISTOFFEL_COMPONENTS[worst]} ({worst})"
    return _check("fd_christoffel", 1e-6, errors[worst], detail)


def check_ricci(rng: np.random.Generator, samples: int) -> List[CheckResult]:
    checks = []
    for n in CURVATURE_NS:
        points = _random_points(rng, n, samples)
        closed = np.array([ricci_scalar_at(p) for p in points])
        exact_miss = float(np.max(np.abs(closed + 3 * n)))
        checks.append(_check(f"ricci_closed_form_N{n}", 0.0, exact_miss, f"R = -{3 * n} exactly"))
        fd = np.array([fd_ricci_scalar(p) for p in points])
        checks.append(_check(f"fd_ricci_scalar_N{n}", 1e-4, float(np.max(np.abs(fd / (-3 * n) - 1.0)))))
    return checks


def check_sectional(rng: np.random.Generator) -> List[CheckResult]:
    checks = []
    for n in (1, 2):
        point = _random_points(rng, n, 1, sigma_range=(0.5, 2.0))[0]
        planes = all_coordinate_planes(point.n_blocks)
        worst = max(abs(fd_sectional_curvature(point, p) - sectional_curvature_at(point, p)) for p in planes)
        checks.append(_check(f"sectional_curvature_N{n}", 1e-5, worst, f"{len(planes)} coordinate planes"))
        values = {round(sectional_curvature_at(point, p), 12) for p in planes}
        # -1/2 in-block and 0 across blocks: not constant curvature
        checks.append(_check(
            f"sectional_not_constant_N{n}", 0.0, 0.0 if len(values) > 1 else 1.0, f"distinct values {sorted(values)}"
        ))
        residuals = riemann_symmetry_residuals(point)
        scale = float(np.max(1.0 / point.sigma ** 4))
        checks.append(_check(f"riemann_symmetries_N{n}", 1e-6, max(residuals.values()) / scale, "relative to max 1/sigma^4"))
    return checks


def check_geodesics() -> List[CheckResult]:
    checks = []
    for rate in RATES:
        params = GeodesicParams(Lambda=SQRT8, lambda_rate=rate, N=1)
        trajectory = integrate_geodesic(analytic_geodesic_eval(params, 0.0), 10.0 / rate, rel_tol=1e-10)
        checks.append(_check(f"geodesic_vs_closed_form_lambda{rate:g}", 1e-8, max_analytic_deviation(trajectory, params)))
        speed = trajectory.speed_sq()
        expected = 6 * params.N * rate ** 2
        checks.append(_check(
            f"geodesic_speed_lambda{rate:g}", 1e-8, float(np.max(np.abs(speed - expected)) / expected), "6 N lambda^2"
        ))
    residual = max(
        geodesic_ode_residual(GeodesicParams(Lambda=SQRT8, lambda_rate=1.0), tau) for tau in (0.0, 0.5, 1.0, 5.0)
    )
    residual = max(residual, geodesic_ode_residual(GeodesicParams(Lambda=1.0, lambda_rate=0.5), 1.0))
    checks.append(_check("geodesic_ode_residual", 1e-6, residual, "closed form in the geodesic equations"))
    return checks


def check_region_volume() -> CheckResult:
    worst = 0.0
    for rate in RATES:
        params = GeodesicParams(Lambda=SQRT8, lambda_rate=rate, N=1)
        for tau in (0.5 / rate, 1.0 / rate, 5.0 / rate):
            closed = region_volume(params, tau)
            quad = region_volume_quadrature(params, tau)
            worst = max(worst, abs(np.expm1(quad - closed)))
    return _check("region_volume_quadrature", 1e-9, worst, "relative, adaptive quadrature")


def check_jacobi(delta_lambda: float = 1e-5) -> List[CheckResult]:
    checks = []
    for rate in RATES:
        params = GeodesicParams(Lambda=SQRT8, lambda_rate=rate, N=1)
        tau_end = 10.0 / rate
        geodesic = integrate_geodesic(analytic_geodesic_eval(params, 0.0), tau_end, rel_tol=1e-10)
        jlc = integrate_jlc(geodesic, oracle_initial_deviation(params, delta_lambda), rel_tol=1e-10)
        oracle = jacobi_fd_oracle(params, delta_lambda, jlc.tau_grid)
        rel = float(np.max(np.abs(jlc.intensities - oracle.intensities) / oracle.intensities))
        checks.append(_check(f"jlc_vs_family_oracle_lambda{rate:g}", 5e-3, rel, f"tau in [0, {tau_end:g}]"))

        taus = np.array([0.0, 0.5 / rate, 2.0 / rate])
        fd = jacobi_fd_oracle(params, delta_lambda, taus)
        dmu, dsigma = geodesic_rate_derivative(params, taus)
        worst = 0.0
        for dev, a_mu, a_sigma in zip(fd.deviations, dmu, dsigma):
            # d mu / d lambda vanishes at tau = 0 when Lambda^2 = 8 lambda^2, so compare in max norm
            scale = max(np.max(np.abs(a_mu)), np.max(np.abs(a_sigma))) * delta_lambda
            miss = max(np.max(np.abs(dev.dmu - a_mu * delta_lambda)), np.max(np.abs(dev.dsigma - a_sigma * delta_lambda)))
            worst = max(worst, float(miss / scale))
        checks.append(_check(f"family_oracle_vs_derivative_lambda{rate:g}", 1e-6, worst, "analytic d/dlambda"))
    return checks


def check_maxent() -> List[CheckResult]:
    grid = GridSpec(-10.0, 10.0, 2001)
    solved = maxent_solve(grid, MomentConstraints(0.0, 1.0))
    reference = discretized_gaussian(solved.grid, 0.0, 1.0)
    core = np.abs(solved.grid) <= 5.0
    sup_rel = float(np.max(np.abs(solved.weights[core] - reference[core]) / reference[core]))
    moments = max(abs(solved.mean), abs(solved.variance - 1.0))
    return [
        _check("maxent_vs_gaussian", 1e-3, sup_rel, "|x| <= 5, mean 0, stddev 1"),
        _check("maxent_moments", 1e-10, moments),
    ]


def _suite_failure(name: str, e: SimulatorError) -> CheckResult:
    return CheckResult(name=name, tolerance=0.0, measured=None, passed=False, detail="; ".join(error_chain(e)))


def verify(seed: int = 0, samples: int = 100) -> VerificationReport:
    """
    Runs every oracle cross-check; deterministic for a given seed. A suite that
    raises is recorded as one failed check named after the suite.
    """
    rng = np.random.default_rng(seed)
    suites: Sequence[Tuple[str, Callable[[], object]]] = (
        ("fisher_metric", lambda: check_fisher_metric(rng, samples)),
        ("christoffel", lambda: check_christoffel(rng, samples)),
        ("ricci", lambda: check_ricci(rng, samples)),
        ("sectional", lambda: check_sectional(rng)),
        ("geodesics", check_geodesics),
        ("region_volume", check_region_volume),
        ("jacobi", check_jacobi),
        ("maxent", check_maxent),
    )
    checks: List[CheckResult] = []
    for name, suite in suites:
        try:
            result = suite()
        except SimulatorError as e:
            logger.error(f"Check suite {name} raised: {e}", exc_info=True)
            checks.append(_suite_failure(name, e))
            continue
        checks.extend(result if isinstance(result, list) else [result])

    report = VerificationReport(checks=checks)
    for check in report.failures:
        measured = "error" if check.measured is None else f"{check.measured:.3g}"
        logger.warning(f"Check {check.name} failed: {measured} > {check.tolerance:g} {check.detail}")
    logger.info(f"Verification: {len(checks) - len(report.failures)}/{len(checks)} checks passed")
    return report
