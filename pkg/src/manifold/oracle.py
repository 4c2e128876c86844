"""
Independent numeric checks of the closed-form geometry: Fisher metric by
quadrature of the score outer product, connection and curvature by central
finite differences of the metric.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy import integrate

from src.errors import ConvergenceError, ManifoldDomainError
from src.manifold.gaussian import (
    BlockMetric,
    ChristoffelSet,
    GeodesicParams,
    ThetaPoint,
    geodesic_state,
    metric_components,
)

logger = logging.getLogger(__name__)

GAUSS_HERMITE = "gauss-hermite"
MONTE_CARLO = "monte-carlo"

# Dense (6N x 6N) finite-difference geometry is only built for small N.
DENSE_MAX_N = 2


@dataclass(frozen=True)
class QuadratureSpec:
    node_count: int = 40
    method: str = GAUSS_HERMITE
    sample_count: int = 1_000_000
    rng_seed: int = 0
    # Monte Carlo is rejected when any standard error exceeds this fraction of its estimate.
    max_rel_std_error: float = 1e-2

    def __post_init__(self):
        if self.method not in (GAUSS_HERMITE, MONTE_CARLO):
            raise ManifoldDomainError(f"unknown quadrature method {self.method!r}")
        if self.node_count < 2:
            raise ManifoldDomainError(f"node_count must be >= 2, got {self.node_count}")
        if self.method == MONTE_CARLO and self.sample_count < 1:
            raise ManifoldDomainError(f"sample_count must be >= 1, got {self.sample_count}")


@dataclass(frozen=True, eq=False)
class FisherQuadratureReport:
    """Per-block 2x2 Fisher matrices plus the certificates that the off-diagonal parts vanish."""
    matrices: np.ndarray  # (n_blocks, 2, 2)
    score_means: np.ndarray  # (n_blocks, 2); cross-block entries are products of these
    std_errors: Optional[np.ndarray] = None  # (n_blocks, 2, 2), Monte Carlo only

    @property
    def blocks(self) -> List[BlockMetric]:
        return [BlockMetric(float(m[0, 0]), float(m[1, 1])) for m in self.matrices]

    @property
    def max_off_diagonal(self) -> float:
        return float(np.max(np.abs(self.matrices[:, 0, 1])))

    @property
    def max_cross_block(self) -> float:
        """Largest |E[s_i] E[s_j]| over coordinates of different blocks."""
        means = np.abs(self.score_means).max(axis=1)
        if means.size < 2:
            return 0.0
        top = np.sort(means)[-2:]
        return float(top[0] * top[1])


def _scores(x: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """d log p / d mu and d log p / d sigma of the Gaussian density."""
    dev = x - mu
    return dev / sigma ** 2, -1.0 / sigma + dev ** 2 / sigma ** 3


def fisher_quadrature_report(point: ThetaPoint, spec: QuadratureSpec) -> FisherQuadratureReport:
    mu = point.mu[np.newaxis, :]
    sigma = point.sigma[np.newaxis, :]

    if spec.method == GAUSS_HERMITE:
        nodes, weights = np.polynomial.hermite.hermgauss(spec.node_count)
        weights = weights / np.sqrt(np.pi)
        x = mu + np.sqrt(2.0) * sigma * nodes[:, np.newaxis]
        s_mu, s_sigma = _scores(x, mu, sigma)
        w = weights[:, np.newaxis]
        products = np.stack([s_mu * s_mu, s_mu * s_sigma, s_sigma * s_sigma])
        expect = np.sum(products * w, axis=1)
        score_means = np.stack([np.sum(s_mu * w, axis=0), np.sum(s_sigma * w, axis=0)], axis=1)
        std_errors = None
    else:
        # Per-call generator, so concurrent calls never share random state.
        rng = np.random.default_rng(spec.rng_seed)
        x = mu + sigma * rng.standard_normal((spec.sample_count, point.n_blocks))
        s_mu, s_sigma = _scores(x, mu, sigma)
        products = np.stack([s_mu * s_mu, s_mu * s_sigma, s_sigma * s_sigma])
        expect = products.mean(axis=1)
        score_means = np.stack([s_mu.mean(axis=0), s_sigma.mean(axis=0)], axis=1)
        se = products.std(axis=1, ddof=1) / np.sqrt(spec.sample_count)
        std_errors = np.empty((point.n_blocks, 2, 2))
        std_errors[:, 0, 0] = se[0]
        std_errors[:, 0, 1] = std_errors[:, 1, 0] = se[1]
        std_errors[:, 1, 1] = se[2]
        rel = np.maximum(se[0] / expect[0], se[2] / expect[2])
        if np.any(rel > spec.max_rel_std_error):
            worst = float(rel.max())
            raise ConvergenceError(
                f"Monte Carlo Fisher estimate not converged: relative std error {worst:.3g} "
                f"> {spec.max_rel_std_error:g} with {spec.sample_count} samples",
                std_error=worst,
            )

    matrices = np.empty((point.n_blocks, 2, 2))
    matrices[:, 0, 0] = expect[0]
    matrices[:, 0, 1] = matrices[:, 1, 0] = expect[1]
    matrices[:, 1, 1] = expect[2]
    return FisherQuadratureReport(matrices=matrices, score_means=score_means, std_errors=std_errors)


def fisher_metric_quadrature(point: ThetaPoint, spec: QuadratureSpec) -> List[BlockMetric]:
    """Fisher-Rao metric from its defining expectation, one block at a time."""
    report = fisher_quadrature_report(point, spec)
    logger.debug(
        f"Fisher quadrature ({spec.method}): max off-diagonal {report.max_off_diagonal:.3g}, "
        f"max cross-block {report.max_cross_block:.3g}"
    )
    return report.blocks


# ---------------------------------------------------------------------------
# Finite-difference geometry
# ---------------------------------------------------------------------------

def _resolve_step(point: ThetaPoint, step: Optional[float], relative_default: float) -> float:
    sigma_min = float(point.sigma.min())
    if step is None:
        return relative_default * sigma_min
    if step <= 0:
        raise ManifoldDomainError(f"step must be positive, got {step}")
    if step >= sigma_min / 10.0:
        raise ManifoldDomainError(f"step {step:g} too large for min sigma {sigma_min:g} (need step < sigma/10)")
    return float(step)


def _christoffel_from_metric(g_inv: np.ndarray, dg: np.ndarray) -> np.ndarray:
    """
    Gamma^a_{bc} = 1/2 g^{ad} (d_b g_dc + d_c g_db - d_d g_bc).
    dg[..., k, i, j] = d_k g_ij; leading axes are batch axes.
    """
    lowered = 0.5 * (
        np.einsum("...bdc->...dbc", dg)
        + np.einsum("...cdb->...dbc", dg)
        - dg
    )
    return np.einsum("...ad,...dbc->...abc", g_inv, lowered)


def _riemann_from_christoffel(gamma: np.ndarray, dgamma: np.ndarray) -> np.ndarray:
    """
    R^a_{bcd} = d_c Gamma^a_{db} - d_d Gamma^a_{cb} + Gamma^a_{ce} Gamma^e_{db} - Gamma^a_{de} Gamma^e_{cb}.
    dgamma[..., k, a, b, c] = d_k Gamma^a_{bc}.
    """
    term_c = np.einsum("...cadb->...abcd", dgamma)
    term_d = np.einsum("...dacb->...abcd", dgamma)
    quad_1 = np.einsum("...ace,...edb->...abcd", gamma, gamma)
    quad_2 = np.einsum("...ade,...ecb->...abcd", gamma, gamma)
    return term_c - term_d + quad_1 - quad_2


def _block_metric_matrices(mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    g_mm, g_ss = metric_components(ThetaPoint(mu, sigma).sigma)
    out = np.zeros((mu.size, 2, 2))
    out[:, 0, 0] = g_mm
    out[:, 1, 1] = g_ss
    return out


def _shifted(point: ThetaPoint, axis: int, delta: float) -> Tuple[np.ndarray, np.ndarray]:
    mu, sigma = point.mu.copy(), point.sigma.copy()
    if axis == 0:
        mu += delta
    else:
        sigma += delta
    return mu, sigma


def _block_metric_derivative(point: ThetaPoint, step: float) -> np.ndarray:
    """
    dg[k, axis, i, j]. Shifting one coordinate type in every block at once is
    enough: each block's metric depends only on that block's coordinates.
    """
    dg = np.empty((point.n_blocks, 2, 2, 2))
    for axis in (0, 1):
        forward = _block_metric_matrices(*_shifted(point, axis, step))
        backward = _block_metric_matrices(*_shifted(point, axis, -step))
        dg[:, axis] = (forward - backward) / (2.0 * step)
    return dg


def _fd_block_christoffel_array(point: ThetaPoint, step: float) -> np.ndarray:
    g = _block_metric_matrices(point.mu, point.sigma)
    g_inv = np.linalg.inv(g)
    return _christoffel_from_metric(g_inv, _block_metric_derivative(point, step))


def fd_christoffel(point: ThetaPoint, step: Optional[float] = None) -> ChristoffelSet:
    """Connection coefficients from central differences of the metric (default step 1e-5 * min sigma)."""
    h = _resolve_step(point, step, 1e-5)
    return ChristoffelSet.from_block_array(_fd_block_christoffel_array(point, h))


def _fd_block_riemann(point: ThetaPoint, step: float) -> Tuple[np.ndarray, np.ndarray]:
    """Per-block R^a_{bcd} (n_blocks, 2, 2, 2, 2) and metric (n_blocks, 2, 2)."""
    gamma = _fd_block_christoffel_array(point, step)
    dgamma = np.empty((point.n_blocks, 2, 2, 2, 2))
    for axis in (0, 1):
        forward = _fd_block_christoffel_array(ThetaPoint(*_shifted(point, axis, step)), step)
        backward = _fd_block_christoffel_array(ThetaPoint(*_shifted(point, axis, -step)), step)
        dgamma[:, axis] = (forward - backward) / (2.0 * step)
    return _riemann_from_christoffel(gamma, dgamma), _block_metric_matrices(point.mu, point.sigma)


def fd_ricci_scalar(point: ThetaPoint, step: Optional[float] = None) -> float:
    """
    Ricci scalar from differentiated finite-difference Christoffel symbols,
    R_bd = R^a_{bad}, R = g^{bd} R_bd summed over blocks. Default step 1e-4 * min sigma.
    """
    h = _resolve_step(point, step, 1e-4)
    riemann, g = _fd_block_riemann(point, h)
    ricci = np.einsum("kabad->kbd", riemann)
    return float(np.einsum("kbd,kbd->", np.linalg.inv(g), ricci))


# Dense path over all 6N coordinates, for cross-validating the block structure.

def _dense_metric(coords: np.ndarray) -> np.ndarray:
    point = ThetaPoint.from_coordinates(coords)
    g_mm, g_ss = metric_components(point.sigma)
    return np.diag(np.column_stack([g_mm, g_ss]).reshape(-1))


def _dense_derivative(fn: Callable[[np.ndarray], np.ndarray], coords: np.ndarray, step: float) -> np.ndarray:
    """Stack of central differences d_k fn along every coordinate k."""
    out = []
    for k in range(coords.size):
        shift = np.zeros_like(coords)
        shift[k] = step
        out.append((fn(coords + shift) - fn(coords - shift)) / (2.0 * step))
    return np.stack(out)


def _dense_christoffel(coords: np.ndarray, step: float) -> np.ndarray:
    g_inv = np.linalg.inv(_dense_metric(coords))
    return _christoffel_from_metric(g_inv, _dense_derivative(_dense_metric, coords, step))


def fd_riemann_dense(point: ThetaPoint, step: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Fully lowered R_{abcd} over all 6N coordinates and the dense metric, N <= 2 only.
    Coordinates are interleaved: (mu_1, sigma_1, mu_2, sigma_2, ...).
    """
    if point.n > DENSE_MAX_N:
        raise ManifoldDomainError(f"dense curvature path supports N <= {DENSE_MAX_N}, got N={point.n}")
    h = _resolve_step(point, step, 1e-4)
    coords = point.coordinates()
    gamma = _dense_christoffel(coords, h)
    dgamma = _dense_derivative(lambda c: _dense_christoffel(c, h), coords, h)
    riemann_up = _riemann_from_christoffel(gamma, dgamma)
    g = _dense_metric(coords)
    return np.einsum("ae,ebcd->abcd", g, riemann_up), g


def fd_sectional_curvature(point: ThetaPoint, plane: Tuple[int, int], step: Optional[float] = None) -> float:
    a, b = plane
    if a == b:
        raise ManifoldDomainError(f"plane needs two distinct coordinates, got ({a}, {b})")
    riemann, g = fd_riemann_dense(point, step)
    return float(riemann[a, b, a, b] / (g[a, a] * g[b, b] - g[a, b] ** 2))


def riemann_symmetry_residuals(point: ThetaPoint, step: Optional[float] = None) -> Dict[str, float]:
    """Max violations of R_abcd = -R_bacd = -R_abdc and of the first Bianchi identity."""
    r, _ = fd_riemann_dense(point, step)
    return {
        "antisymmetry_first_pair": float(np.max(np.abs(r + np.einsum("abcd->bacd", r)))),
        "antisymmetry_last_pair": float(np.max(np.abs(r + np.einsum("abcd->abdc", r)))),
        "first_bianchi": float(np.max(np.abs(
            r + np.einsum("abcd->acdb", r) + np.einsum("abcd->adbc", r)
        ))),
    }


def region_volume_quadrature(params: GeodesicParams, tau: float, rel_tol: float = 1e-10) -> float:
    """
    log of the swept region volume by adaptive quadrature of sqrt(2)/sigma^2 dmu dsigma,
    one block at a time. Independent check of the closed-form antiderivative.
    """
    if tau <= 0:
        raise ManifoldDomainError(f"tau must be positive, got {tau}")
    mu, sigma, _, _ = geodesic_state(params, [0.0, tau])
    total = 0.0
    for k in range(params.n_blocks):
        mu_len, _ = integrate.quad(lambda _m: 1.0, mu[0, k], mu[1, k], epsrel=rel_tol, epsabs=0.0)
        lo, hi = sorted((sigma[0, k], sigma[1, k]))
        sigma_len, _ = integrate.quad(
            lambda s: np.sqrt(2.0) / s ** 2, lo, hi, epsrel=rel_tol, epsabs=0.0, limit=200
        )
        total += np.log(abs(mu_len)) + np.log(sigma_len)
    return float(total)
