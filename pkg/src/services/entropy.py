import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from src.errors import ManifoldDomainError
from src.manifold.gaussian import GeodesicParams, ThetaPoint, volume_density

logger = logging.getLogger(__name__)

MIN_QUAD_POINTS = 16
DEFAULT_QUAD_POINTS = 64
# Largest growth of log(region volume) allowed between neighbouring trapezoid nodes.
MAX_LOG_STEP = 0.05


@dataclass(frozen=True, eq=False)
class VolumeSeries:
    tau_grid: np.ndarray
    log_region_volume: np.ndarray
    log_avg_volume: np.ndarray

    @property
    def entropy(self) -> np.ndarray:
        """Information-geometric entropy S = log of the averaged volume."""
        return self.log_avg_volume


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float


def volume_element(point: ThetaPoint) -> float:
    """sqrt(g) of the Fisher-Rao metric, prod_k sqrt(2) / sigma_k^2."""
    return volume_density(point)


def _log_region_volume(params: GeodesicParams, tau: np.ndarray) -> np.ndarray:
    """
    log of the swept volume for each tau, summed over blocks. Per block the
    volume is |mu(tau) - mu(0)| * sqrt(2) |1/sigma(tau) - 1/sigma(0)|, written with
    u = exp(-2 beta tau), k = B^2 / (8 beta^2) as

        |dmu|      = B^2 / (2 beta) * (1 - u) / ((u + k)(1 + k))
        |d(1/sig)| = exp(beta tau) |k - exp(-beta tau)| (1 - exp(-beta tau)) / B

    so nothing overflows for large beta tau. tau = 0 gives -inf.
    """
    b, beta, _ = params.per_block()
    t = np.asarray(tau, dtype=float).reshape(-1, 1)
    k = np.square(b) / (8.0 * np.square(beta))
    with np.errstate(divide="ignore"):
        log_dmu = (
            np.log(np.square(b) / (2.0 * beta))
            + np.log(-np.expm1(-2.0 * beta * t))
            - np.log(np.exp(-2.0 * beta * t) + k)
            - np.log1p(k)
        )
        log_dsigma = (
            beta * t
            + np.log(np.abs(k - np.exp(-beta * t)))
            + np.log(-np.expm1(-beta * t))
            - np.log(b)
            + 0.5 * math.log(2.0)
        )
    return np.sum(log_dmu + log_dsigma, axis=1)


def region_volume(params: GeodesicParams, tau: float) -> float:
    """log of the volume swept by the geodesic between 0 and tau."""
    if not tau > 0:
        raise ManifoldDomainError(f"tau must be positive, got {tau}")
    return float(_log_region_volume(params, np.array([tau]))[0])


def averaged_log_volume(params: GeodesicParams, tau: float, quad_points: int = DEFAULT_QUAD_POINTS) -> float:
    """
    log of (1/tau) * integral_0^tau of the region volume, by the trapezoid rule
    summed with logsumexp. The rule is refined until log-volume grows by at most
    MAX_LOG_STEP per interval, so the node count scales with 3N lambda tau.
    """
    if not tau > 0:
        raise ManifoldDomainError(f"tau must be positive, got {tau}")
    if quad_points < MIN_QUAD_POINTS:
        raise ManifoldDomainError(f"quad_points must be at least {MIN_QUAD_POINTS}, got {quad_points}")
    _, beta, _ = params.per_block()
    nodes = max(quad_points, int(math.ceil(float(np.sum(beta)) * tau / MAX_LOG_STEP)) + 1)
    grid = np.linspace(0.0, tau, nodes)
    weights = np.full(nodes, tau / (nodes - 1))
    weights[[0, -1]] *= 0.5
    log_values = _log_region_volume(params, grid)
    return float(logsumexp(log_values, b=weights) - math.log(tau))


def ig_entropy_series(
    params: GeodesicParams,
    tau_grid: Sequence[float],
    quad_points: int = DEFAULT_QUAD_POINTS,
) -> VolumeSeries:
    tau = np.asarray(tau_grid, dtype=float).reshape(-1)
    if tau.size == 0 or np.any(tau <= 0) or np.any(np.diff(tau) <= 0):
        raise ManifoldDomainError("entropy tau grid must be positive and strictly increasing")
    log_avg = np.array([averaged_log_volume(params, t, quad_points) for t in tau])
    logger.debug(f"Entropy series: {tau.size} points, S({tau[-1]:g}) = {log_avg[-1]:.6g}")
    return VolumeSeries(
        tau_grid=tau,
        log_region_volume=_log_region_volume(params, tau),
        log_avg_volume=log_avg,
    )


def slope_fit(
    tau: Sequence[float],
    values: Sequence[float],
    window: Optional[Tuple[float, float]] = None,
) -> SlopeFit:
    """Ordinary least squares of values against tau, optionally restricted to a closed window."""
    tau = np.asarray(tau, dtype=float)
    values = np.asarray(values, dtype=float)
    if tau.shape != values.shape:
        raise ManifoldDomainError(f"tau has {tau.size} entries but values has {values.size}")
    if window is not None:
        lo, hi = window
        mask = (tau >= lo) & (tau <= hi)
        tau, values = tau[mask], values[mask]
    if tau.size < 3:
        raise ManifoldDomainError(f"slope fit needs at least 3 points in the window, got {tau.size}")
    if np.ptp(tau) == 0:
        raise ManifoldDomainError("slope fit window is degenerate: all tau are equal")
    fit = stats.linregress(tau, values)
    # linregress reports r = 0 for a constant series, which the line fits exactly.
    r_squared = 1.0 if np.ptp(values) == 0 else float(fit.rvalue) ** 2
    return SlopeFit(slope=float(fit.slope), intercept=float(fit.intercept), r_squared=r_squared)
