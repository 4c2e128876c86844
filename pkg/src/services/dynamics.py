import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import OdeSolution

from src.errors import ManifoldDomainError
from src.manifold.gaussian import (
    GeodesicParams,
    TangentVector,
    ThetaPoint,
    connection_action,
    curvature_action,
    geodesic_rate_derivative,
    geodesic_state,
    metric_components,
    metric_inner,
    metric_speed_sq,
)
from src.services.entropy import slope_fit
from src.services.integrator import STATUS_OK, IntegratorStats, integrate_sampled

logger = logging.getLogger(__name__)

MIN_REL_TOL = 1e-12
MAX_REL_TOL = 1e-3
# Absolute tolerances are this fraction of rel_tol (times the data scale), i.e. control is relative.
ABS_TOL_FRACTION = 1e-12
INTENSITY_OVERFLOW = 1e300
# Below this the metric 1/sigma^2 is no longer a finite double.
SIGMA_FLOOR = 1e-150
LOG_SIGMA_FLOOR = math.log(SIGMA_FLOOR)

STATUS_SIGMA_COLLAPSE = "sigma_collapse"
STATUS_OVERFLOW = "overflow"

DEFAULT_SAMPLES = 201


@dataclass(frozen=True, eq=False)
class GeodesicTrajectory:
    tau_grid: np.ndarray
    points: List[ThetaPoint]
    velocities: List[TangentVector]
    stats: IntegratorStats
    status: str = STATUS_OK
    message: str = ""
    solution: Optional[OdeSolution] = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK

    @property
    def states(self) -> List[Tuple[ThetaPoint, TangentVector]]:
        return list(zip(self.points, self.velocities))

    @property
    def n_blocks(self) -> int:
        return self.points[0].n_blocks

    def speed_sq(self) -> np.ndarray:
        return np.array([metric_speed_sq(p, v) for p, v in zip(self.points, self.velocities)])

    def state_at(self, tau: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(mu, sigma, dmu, dsigma) from the dense interpolant."""
        if self.solution is None:
            raise ManifoldDomainError("trajectory has no dense output")
        return _from_frame(self.solution(tau))


@dataclass(frozen=True, eq=False)
class JacobiTrajectory:
    tau_grid: np.ndarray
    deviations: List[TangentVector]
    covariant_rates: List[TangentVector]
    intensities: np.ndarray
    status: str = STATUS_OK
    message: str = ""
    stats: Optional[IntegratorStats] = None

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK

    def running_rate(self) -> np.ndarray:
        """ln(|J(tau)| / |J(0)|) / tau; undefined (NaN) at tau = 0 or for a vanishing field."""
        with np.errstate(divide="ignore", invalid="ignore"):
            rate = np.log(self.intensities / self.intensities[0]) / self.tau_grid
        rate[~np.isfinite(rate)] = np.nan
        return rate


@dataclass(frozen=True)
class JacobiPrefactor:
    """Fitted |J| ~ A delta_lambda exp(rate tau), next to the closed-form asymptote of A."""
    fitted_rate: float
    measured: float
    analytic: float
    block_count_form: float

    @property
    def ratio_to_analytic(self) -> float:
        return self.measured / self.analytic


def _split(y: np.ndarray, parts: int) -> Tuple[np.ndarray, ...]:
    return tuple(np.split(np.asarray(y), parts))


def _intensity(j_mu: np.ndarray, j_sigma: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    g_mm, g_ss = metric_components(sigma)
    return np.sqrt(np.sum(g_mm * j_mu ** 2 + g_ss * j_sigma ** 2, axis=-1))


def _check_rel_tol(rel_tol: float) -> None:
    if not MIN_REL_TOL <= rel_tol <= MAX_REL_TOL:
        raise ManifoldDomainError(f"rel_tol must lie in [{MIN_REL_TOL:g}, {MAX_REL_TOL:g}], got {rel_tol:g}")


def _tau_grid(tau_end: float, tau_grid: Optional[Sequence[float]], samples: int) -> np.ndarray:
    if tau_grid is None:
        if not tau_end > 0:
            raise ManifoldDomainError(f"tau_end must be positive, got {tau_end}")
        return np.linspace(0.0, tau_end, samples)
    grid = np.asarray(tau_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ManifoldDomainError("tau grid must be strictly increasing with at least 2 points")
    return grid


def _to_frame(mu: np.ndarray, sigma: np.ndarray, dmu: np.ndarray, dsigma: np.ndarray) -> np.ndarray:
    """(mu, log sigma, dmu / sigma, dsigma / sigma), the geodesic solver's state."""
    return np.concatenate([mu, np.log(sigma), dmu / sigma, dsigma / sigma])


def _from_frame(y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    mu, log_sigma, u, r = _split(y, 4)
    sigma = np.exp(log_sigma)
    return mu, sigma, sigma * u, sigma * r


def _geodesic_rhs(t: float, y: np.ndarray) -> np.ndarray:
    """
    Per block the geodesic equations mu'' = 2 mu' sigma' / sigma and
    sigma'' = (sigma'^2 - mu'^2 / 2) / sigma, written for s = log sigma,
    u = mu' / sigma, r = sigma' / sigma:

        mu' = e^s u,  s' = r,  u' = u r,  r' = -u^2 / 2

    sigma decays like exp(-lambda tau); in these variables it keeps full
    relative accuracy and every state component stays bounded.
    """
    _, log_sigma, u, r = _split(y, 4)
    return np.concatenate([np.exp(log_sigma) * u, r, u * r, -0.5 * u * u])


def integrate_geodesic(
    initial: Tuple[ThetaPoint, TangentVector],
    tau_end: float,
    rel_tol: float = 1e-10,
    tau_grid: Optional[Sequence[float]] = None,
    samples: int = DEFAULT_SAMPLES,
) -> GeodesicTrajectory:
    """
    Numerical solution of the geodesic equations, all blocks at once.
    Samples are read from the dense output at tau_grid (default: `samples`
    equispaced points on [0, tau_end]). If sigma falls below SIGMA_FLOOR, the
    state stops being finite or the step size underflows, the trajectory is
    returned up to the last valid sample with a status tag.
    """
    _check_rel_tol(rel_tol)
    point, velocity = initial
    velocity.check_matches(point)
    grid = _tau_grid(tau_end, tau_grid, samples)

    y0 = _to_frame(point.mu, point.sigma, velocity.dmu, velocity.dsigma)
    speed0 = metric_speed_sq(point, velocity)

    def speed_drift(t: float, y: np.ndarray) -> float:
        _, _, u, r = _split(y, 4)
        speed = float(np.sum(u ** 2 + 2.0 * r ** 2))
        return abs(speed - speed0) / speed0 if speed0 > 0 else abs(speed)

    def sigma_guard(t: float, y: np.ndarray):
        _, log_sigma, _, _ = _split(y, 4)
        if not np.all(np.isfinite(y)):
            return STATUS_SIGMA_COLLAPSE, f"state stopped being finite at tau={t:.6g}"
        if np.any(log_sigma < LOG_SIGMA_FLOOR):
            return STATUS_SIGMA_COLLAPSE, f"sigma fell below {SIGMA_FLOOR:g} at tau={t:.6g}"
        return None

    logger.info(f"Integrating geodesic: {point.n_blocks} blocks, tau in [{grid[0]:g}, {grid[-1]:g}], rel_tol={rel_tol:g}")
    result = integrate_sampled(
        _geodesic_rhs,
        y0,
        grid,
        rtol=rel_tol,
        atol=rel_tol * ABS_TOL_FRACTION,
        guard=sigma_guard,
        error_monitor=speed_drift,
    )
    points, velocities = [point], [velocity]
    for state in result.states[1:]:
        mu, sigma, dmu, dsigma = _from_frame(state)
        points.append(ThetaPoint(mu, sigma))
        velocities.append(TangentVector(dmu, dsigma))
    return GeodesicTrajectory(
        tau_grid=result.tau,
        points=points,
        velocities=velocities,
        stats=result.stats,
        status=result.status,
        message=result.message,
        solution=result.solution,
    )


def max_analytic_deviation(trajectory: GeodesicTrajectory, params: GeodesicParams) -> float:
    """Sup-norm distance between sampled numeric positions and the closed form."""
    mu, sigma, _, _ = geodesic_state(params, trajectory.tau_grid)
    num_mu = np.array([p.mu for p in trajectory.points])
    num_sigma = np.array([p.sigma for p in trajectory.points])
    return float(max(np.max(np.abs(num_mu - mu)), np.max(np.abs(num_sigma - sigma))))


def jacobi_intensity(deviation: TangentVector, at: ThetaPoint) -> float:
    """Metric norm (g_ab J^a J^b)^(1/2) of a deviation vector."""
    return float(np.sqrt(metric_inner(at, deviation, deviation)))


def _zero_jacobi(geodesic: GeodesicTrajectory) -> JacobiTrajectory:
    zeros = [TangentVector.zeros(geodesic.n_blocks) for _ in geodesic.tau_grid]
    return JacobiTrajectory(
        tau_grid=geodesic.tau_grid.copy(),
        deviations=zeros,
        covariant_rates=list(zeros),
        intensities=np.zeros(geodesic.tau_grid.size),
        stats=IntegratorStats(),
    )


def integrate_jlc(
    geodesic: GeodesicTrajectory,
    initial_deviation: Tuple[TangentVector, TangentVector],
    rel_tol: float = 1e-10,
) -> JacobiTrajectory:
    """
    Integrates the Jacobi-Levi-Civita equation D^2 J / D tau^2 + R(J, v) v = 0
    along the geodesic's dense output. The state is (J, W = DJ/Dtau):

        dJ/dtau = W - Gamma(v, J)
        dW/dtau = -R(J, v) v - Gamma(v, W)

    `initial_deviation` is (J(0), DJ/Dtau(0)). Tolerances scale with the initial
    data, so the result is exactly homogeneous of degree one in it.
    """
    _check_rel_tol(rel_tol)
    if geodesic.solution is None:
        raise ManifoldDomainError("geodesic has no dense output to integrate along")
    j0, w0 = initial_deviation
    j0.check_matches(geodesic.points[0])
    w0.check_matches(geodesic.points[0])

    y0 = np.concatenate([j0.dmu, j0.dsigma, w0.dmu, w0.dsigma])
    scale = float(np.max(np.abs(y0)))
    if scale == 0.0:
        return _zero_jacobi(geodesic)

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        _, sigma, v_mu, v_sigma = geodesic.state_at(t)
        j_mu, j_sigma, w_mu, w_sigma = _split(y, 4)
        cj_mu, cj_sigma = connection_action(sigma, v_mu, v_sigma, j_mu, j_sigma)
        cw_mu, cw_sigma = connection_action(sigma, v_mu, v_sigma, w_mu, w_sigma)
        r_mu, r_sigma = curvature_action(sigma, v_mu, v_sigma, j_mu, j_sigma)
        return np.concatenate([w_mu - cj_mu, w_sigma - cj_sigma, -r_mu - cw_mu, -r_sigma - cw_sigma])

    def overflow_guard(t: float, y: np.ndarray):
        _, sigma, _, _ = geodesic.state_at(t)
        j_mu, j_sigma, _, _ = _split(y, 4)
        norm = _intensity(j_mu, j_sigma, sigma)
        if not np.isfinite(norm) or norm > INTENSITY_OVERFLOW:
            return STATUS_OVERFLOW, f"Jacobi intensity exceeded {INTENSITY_OVERFLOW:g} at tau={t:.6g}"
        return None

    result = integrate_sampled(
        rhs,
        y0,
        geodesic.tau_grid,
        rtol=rel_tol,
        atol=rel_tol * ABS_TOL_FRACTION * scale,
        guard=overflow_guard,
    )
    deviations, rates, intensities = [], [], []
    for state, point in zip(result.states, geodesic.points):
        j_mu, j_sigma, w_mu, w_sigma = _split(state, 4)
        deviation = TangentVector(j_mu, j_sigma)
        deviations.append(deviation)
        rates.append(TangentVector(w_mu, w_sigma))
        intensities.append(jacobi_intensity(deviation, point))
    logger.info(
        f"JLC integration ({result.status}): {len(deviations)} samples, "
        f"final intensity {intensities[-1]:.6g}"
    )
    return JacobiTrajectory(
        tau_grid=result.tau,
        deviations=deviations,
        covariant_rates=rates,
        intensities=np.array(intensities),
        status=result.status,
        message=result.message,
        stats=result.stats,
    )


def _family_deviation(params: GeodesicParams, delta_lambda: float, tau: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    rate = np.asarray(params.lambda_rate, dtype=float)
    plus = geodesic_state(params.with_rate(rate + delta_lambda), tau)
    minus = geodesic_state(params.with_rate(rate - delta_lambda), tau)
    return 0.5 * (plus[0] - minus[0]), 0.5 * (plus[1] - minus[1])


def jacobi_fd_oracle(params: GeodesicParams, delta_lambda: float, tau_grid: Sequence[float]) -> JacobiTrajectory:
    """
    Jacobi field of the one-parameter family of closed-form geodesics in lambda:
    J = [Theta(lambda + dl) - Theta(lambda - dl)] / 2, i.e. (dTheta/dlambda) dl.
    The covariant rate is a central tau-difference of J plus Gamma(v, J).
    """
    ratio = delta_lambda / np.asarray(params.lambda_rate, dtype=float)
    if np.any(ratio < 1e-8) or np.any(ratio > 1e-3):
        raise ManifoldDomainError(f"delta_lambda must lie in [1e-8, 1e-3] * lambda, got {delta_lambda:g}")
    tau = np.asarray(tau_grid, dtype=float).reshape(-1)
    if tau.size == 0:
        raise ManifoldDomainError("tau grid is empty")

    j_mu, j_sigma = _family_deviation(params, delta_lambda, tau)
    h = 1e-4 / params.max_rate
    fwd_mu, fwd_sigma = _family_deviation(params, delta_lambda, tau + h)
    bwd_mu, bwd_sigma = _family_deviation(params, delta_lambda, tau - h)
    dj_mu = (fwd_mu - bwd_mu) / (2.0 * h)
    dj_sigma = (fwd_sigma - bwd_sigma) / (2.0 * h)

    _, sigma, v_mu, v_sigma = geodesic_state(params, tau)
    conn_mu, conn_sigma = connection_action(sigma, v_mu, v_sigma, j_mu, j_sigma)
    intensities = _intensity(j_mu, j_sigma, sigma)
    return JacobiTrajectory(
        tau_grid=tau,
        deviations=[TangentVector(a, b) for a, b in zip(j_mu, j_sigma)],
        covariant_rates=[TangentVector(a, b) for a, b in zip(dj_mu + conn_mu, dj_sigma + conn_sigma)],
        intensities=intensities,
    )


def analytic_jacobi_field(params: GeodesicParams, delta_lambda: float, tau: float) -> TangentVector:
    """(d mu / d lambda, d sigma / d lambda) * delta_lambda from the exact derivative."""
    dmu, dsigma = geodesic_rate_derivative(params, tau)
    return TangentVector(dmu[0] * delta_lambda, dsigma[0] * delta_lambda)


def oracle_initial_deviation(params: GeodesicParams, delta_lambda: float) -> Tuple[TangentVector, TangentVector]:
    """(J(0), DJ/Dtau(0)) of the lambda-family, the default JLC initial data."""
    oracle = jacobi_fd_oracle(params, delta_lambda, [0.0])
    return oracle.deviations[0], oracle.covariant_rates[0]


def _window_mask(tau: np.ndarray, window: Tuple[float, float]) -> np.ndarray:
    lo, hi = window
    if not lo < hi:
        raise ManifoldDomainError(f"window ({lo}, {hi}) is empty")
    if lo < tau[0] - 1e-12 or hi > tau[-1] + 1e-12:
        raise ManifoldDomainError(f"window ({lo}, {hi}) lies outside the series [{tau[0]}, {tau[-1]}]")
    return (tau >= lo) & (tau <= hi)


def lyapunov_estimate(tau: Sequence[float], intensities: Sequence[float], window: Tuple[float, float]) -> float:
    """Least-squares slope of ln|J| against tau on the window, a finite-tau Lyapunov exponent."""
    tau = np.asarray(tau, dtype=float)
    intensities = np.asarray(intensities, dtype=float)
    mask = _window_mask(tau, window)
    if np.any(intensities[mask] <= 0):
        raise ManifoldDomainError("intensities must be positive on the fit window")
    return slope_fit(tau[mask], np.log(intensities[mask])).slope


def jacobi_prefactor(
    tau: Sequence[float],
    intensities: Sequence[float],
    window: Tuple[float, float],
    params: GeodesicParams,
    delta_lambda: float,
) -> JacobiPrefactor:
    """
    Reports A in |J| ~ A dl exp(lambda tau). For the lambda-family the mu-component
    dominates and A -> sqrt(sum_blocks (Lambda / (2 lambda^2))^2), i.e.
    sqrt(3N) Lambda / (2 lambda^2) with shared constants; 3N is listed for comparison.
    """
    tau = np.asarray(tau, dtype=float)
    intensities = np.asarray(intensities, dtype=float)
    mask = _window_mask(tau, window)
    fit = slope_fit(tau[mask], np.log(intensities[mask]))
    b, beta, _ = params.per_block()
    analytic = float(np.sqrt(np.sum(np.square(b / (2.0 * np.square(beta))))))
    return JacobiPrefactor(
        fitted_rate=fit.slope,
        measured=float(np.exp(fit.intercept) / delta_lambda),
        analytic=analytic,
        block_count_form=float(params.n_blocks),
    )
