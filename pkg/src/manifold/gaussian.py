import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import ManifoldDomainError

logger = logging.getLogger(__name__)

# Each microstate contributes three independent Gaussian blocks (x, y, z).
BLOCKS_PER_MICROSTATE = 3

# Gaussian curvature of a single (mu, sigma) block with metric (dmu^2 + 2 dsigma^2) / sigma^2.
BLOCK_GAUSSIAN_CURVATURE = -0.5

ArrayLike = Union[float, Sequence[float], np.ndarray]


def _readonly(values: ArrayLike) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ThetaPoint:
    """
    A macrostate: 3N blocks of (mean, standard deviation).
    Arrays are copied and frozen on construction, so a point never changes.
    """
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = _readonly(self.mu)
        sigma = _readonly(self.sigma)
        if mu.shape != sigma.shape:
            raise ManifoldDomainError(f"mu has {mu.size} blocks but sigma has {sigma.size}")
        if mu.size == 0 or mu.size % BLOCKS_PER_MICROSTATE:
            raise ManifoldDomainError(f"block count must be 3N with N >= 1, got {mu.size}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ManifoldDomainError("coordinates must be finite")
        if np.any(sigma <= 0):
            raise ManifoldDomainError(f"sigma must be positive in every block, min is {sigma.min()}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n_blocks(self) -> int:
        return self.mu.size

    @property
    def n(self) -> int:
        """Number of microstates N."""
        return self.mu.size // BLOCKS_PER_MICROSTATE

    @property
    def dimension(self) -> int:
        return 2 * self.mu.size

    @property
    def blocks(self) -> List[Tuple[float, float]]:
        return list(zip(self.mu.tolist(), self.sigma.tolist()))

    @classmethod
    def uniform(cls, n: int, mu: float = 0.0, sigma: float = 1.0) -> "ThetaPoint":
        size = BLOCKS_PER_MICROSTATE * n
        return cls(np.full(size, mu), np.full(size, sigma))

    @classmethod
    def from_blocks(cls, blocks: Sequence[Tuple[float, float]]) -> "ThetaPoint":
        arr = np.asarray(blocks, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])

    def coordinates(self) -> np.ndarray:
        """Interleaved coordinate vector (mu_1, sigma_1, mu_2, sigma_2, ...)."""
        return np.column_stack([self.mu, self.sigma]).reshape(-1)

    @classmethod
    def from_coordinates(cls, coords: np.ndarray) -> "ThetaPoint":
        arr = np.asarray(coords, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Per-block components (dmu, dsigma) of a tangent vector."""
    dmu: np.ndarray
    dsigma: np.ndarray

    def __post_init__(self):
        dmu = _readonly(self.dmu)
        dsigma = _readonly(self.dsigma)
        if dmu.shape != dsigma.shape:
            raise ManifoldDomainError(f"dmu has {dmu.size} blocks but dsigma has {dsigma.size}")
        object.__setattr__(self, "dmu", dmu)
        object.__setattr__(self, "dsigma", dsigma)

    @property
    def n_blocks(self) -> int:
        return self.dmu.size

    @classmethod
    def zeros(cls, n_blocks: int) -> "TangentVector":
        return cls(np.zeros(n_blocks), np.zeros(n_blocks))

    def scaled(self, factor: float) -> "TangentVector":
        return TangentVector(self.dmu * factor, self.dsigma * factor)

    def check_matches(self, point: ThetaPoint) -> None:
        if self.n_blocks != point.n_blocks:
            raise ManifoldDomainError(
                f"tangent vector has {self.n_blocks} blocks, point has {point.n_blocks}"
            )


@dataclass(frozen=True)
class BlockMetric:
    """Diagonal entries of one 2x2 block of a (co)metric."""
    g_mumu: float
    g_sigmasigma: float

    def __post_init__(self):
        if not (self.g_mumu > 0 and self.g_sigmasigma > 0):
            raise ManifoldDomainError(
                f"block metric must be positive definite, got ({self.g_mumu}, {self.g_sigmasigma})"
            )


@dataclass(frozen=True, eq=False)
class ChristoffelSet:
    """
    Non-zero connection coefficients per block. Gamma^mu_{sigma mu} equals
    Gamma^mu_{mu sigma}; every other component, and every cross-block one, is zero.
    """
    gamma_mu_musigma: np.ndarray
    gamma_sigma_mumu: np.ndarray
    gamma_sigma_sigmasigma: np.ndarray

    def block_array(self) -> np.ndarray:
        """Full per-block array G[k, a, b, c] = Gamma^a_{bc} with 0 = mu, 1 = sigma."""
        n = self.gamma_mu_musigma.size
        gamma = np.zeros((n, 2, 2, 2))
        gamma[:, 0, 0, 1] = self.gamma_mu_musigma
        gamma[:, 0, 1, 0] = self.gamma_mu_musigma
        gamma[:, 1, 0, 0] = self.gamma_sigma_mumu
        gamma[:, 1, 1, 1] = self.gamma_sigma_sigmasigma
        return gamma

    @classmethod
    def from_block_array(cls, gamma: np.ndarray) -> "ChristoffelSet":
        return cls(
            gamma_mu_musigma=gamma[:, 0, 0, 1].copy(),
            gamma_sigma_mumu=gamma[:, 1, 0, 0].copy(),
            gamma_sigma_sigmasigma=gamma[:, 1, 1, 1].copy(),
        )


@dataclass(frozen=True)
class CurvatureReport:
    ricci_scalar: float
    sectional: Dict[Tuple[int, int], float] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class GeodesicParams:
    """
    Integration constants of the analytic geodesics: Lambda (B), lambda_rate (beta), C.
    Scalars are shared by all 3N blocks; length-3N arrays give per-block constants.
    """
    Lambda: ArrayLike
    lambda_rate: ArrayLike
    C: ArrayLike = 0.0
    N: int = 1

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ManifoldDomainError(f"N must be a positive integer, got {self.N}")
        size = BLOCKS_PER_MICROSTATE * int(self.N)
        values = {}
        for name in ("Lambda", "lambda_rate", "C"):
            raw = np.asarray(getattr(self, name), dtype=float)
            if raw.ndim == 0:
                values[name] = float(raw)
                continue
            if raw.size != size:
                raise ManifoldDomainError(f"{name} must be a scalar or have {size} entries, got {raw.size}")
            values[name] = _readonly(raw)
        for name in ("Lambda", "lambda_rate"):
            if np.any(np.asarray(values[name]) <= 0) or not np.all(np.isfinite(values[name])):
                raise ManifoldDomainError(f"{name} must be positive and finite")
        if not np.all(np.isfinite(values["C"])):
            raise ManifoldDomainError("C must be finite")
        for name, value in values.items():
            object.__setattr__(self, name, value)
        object.__setattr__(self, "N", int(self.N))

    @property
    def n_blocks(self) -> int:
        return BLOCKS_PER_MICROSTATE * self.N

    def per_block(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(B, beta, C) broadcast to one entry per block."""
        shape = (self.n_blocks,)
        return (
            np.broadcast_to(np.asarray(self.Lambda, dtype=float), shape),
            np.broadcast_to(np.asarray(self.lambda_rate, dtype=float), shape),
            np.broadcast_to(np.asarray(self.C, dtype=float), shape),
        )

    def with_rate(self, lambda_rate: ArrayLike) -> "GeodesicParams":
        return GeodesicParams(Lambda=self.Lambda, lambda_rate=lambda_rate, C=self.C, N=self.N)

    @property
    def max_rate(self) -> float:
        return float(np.max(self.lambda_rate))


# ---------------------------------------------------------------------------
# Array kernels. They take plain per-block arrays so integrators can call them
# on intermediate Runge-Kutta stages without building validated points.
# ---------------------------------------------------------------------------

def metric_components(sigma: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    inv_sq = 1.0 / np.square(sigma)
    return inv_sq, 2.0 * inv_sq


def christoffel_components(sigma: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(Gamma^mu_{mu sigma}, Gamma^sigma_{mu mu}, Gamma^sigma_{sigma sigma})."""
    inv = 1.0 / sigma
    return -inv, 0.5 * inv, -inv


def connection_action(
    sigma: np.ndarray,
    u_mu: np.ndarray,
    u_sigma: np.ndarray,
    w_mu: np.ndarray,
    w_sigma: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Gamma^a_{bc} u^b w^c per block."""
    g_mms, g_smm, g_sss = christoffel_components(sigma)
    out_mu = g_mms * (u_mu * w_sigma + u_sigma * w_mu)
    out_sigma = g_smm * u_mu * w_mu + g_sss * u_sigma * w_sigma
    return out_mu, out_sigma


def curvature_action(
    sigma: np.ndarray,
    v_mu: np.ndarray,
    v_sigma: np.ndarray,
    j_mu: np.ndarray,
    j_sigma: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """R(J, v)v per block; each block has constant curvature K, so R(J, v)v = K(|v|^2 J - <J, v> v)."""
    g_mm, g_ss = metric_components(sigma)
    v_sq = g_mm * v_mu * v_mu + g_ss * v_sigma * v_sigma
    j_dot_v = g_mm * j_mu * v_mu + g_ss * j_sigma * v_sigma
    k = BLOCK_GAUSSIAN_CURVATURE
    return k * (v_sq * j_mu - j_dot_v * v_mu), k * (v_sq * j_sigma - j_dot_v * v_sigma)


def geodesic_state(params: GeodesicParams, tau: ArrayLike) -> Tuple[np.ndarray, ...]:
    """
    Analytic geodesic (mu, sigma, dmu, dsigma) for every tau, shape (len(tau), 3N).

    With u = exp(-2 beta tau), k = B^2 / (8 beta^2) and D = u + k:
        mu = B^2 / (2 beta D) + C,   sigma = B exp(-beta tau) / D
    which is the cosh/sinh form with cosh(x) - sinh(x) = exp(-x).
    """
    b, beta, c = params.per_block()
    t = np.asarray(tau, dtype=float).reshape(-1, 1)
    u = np.exp(-2.0 * beta * t)
    k = np.square(b) / (8.0 * np.square(beta))
    d = u + k
    mu = np.square(b) / (2.0 * beta * d) + c
    sigma = b * np.exp(-beta * t) / d
    dmu = np.square(b) * u / np.square(d)
    dsigma = sigma * beta * (u - k) / d
    return mu, sigma, dmu, dsigma


def geodesic_rate_derivative(params: GeodesicParams, tau: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    """Exact (d mu / d beta, d sigma / d beta) of the analytic family at fixed tau."""
    b, beta, _ = params.per_block()
    t = np.asarray(tau, dtype=float).reshape(-1, 1)
    u = np.exp(-2.0 * beta * t)
    d = u + np.square(b) / (8.0 * np.square(beta))
    dd_dbeta = -2.0 * t * u - np.square(b) / (4.0 * beta ** 3)
    dmu_dbeta = -np.square(b) / (2.0 * np.square(beta) * d) - np.square(b) / (2.0 * beta * np.square(d)) * dd_dbeta
    sigma = b * np.exp(-beta * t) / d
    dsigma_dbeta = -t * sigma - sigma / d * dd_dbeta
    return dmu_dbeta, dsigma_dbeta


# ---------------------------------------------------------------------------
# Operations on validated points
# ---------------------------------------------------------------------------

def metric_at(point: ThetaPoint) -> List[BlockMetric]:
    """
    Fisher-Rao metric, block-diagonal with diag(1/sigma^2, 2/sigma^2) per block.
    Entries grow as sigma^-2 when sigma -> 0+; nothing is clamped.
    """
    g_mm, g_ss = metric_components(point.sigma)
    return [BlockMetric(a, b) for a, b in zip(g_mm.tolist(), g_ss.tolist())]


def inverse_metric_at(point: ThetaPoint) -> List[BlockMetric]:
    sigma_sq = np.square(point.sigma)
    return [BlockMetric(a, b) for a, b in zip(sigma_sq.tolist(), (0.5 * sigma_sq).tolist())]


def metric_inner(point: ThetaPoint, u: TangentVector, v: TangentVector) -> float:
    u.check_matches(point)
    v.check_matches(point)
    g_mm, g_ss = metric_components(point.sigma)
    return float(np.sum(g_mm * u.dmu * v.dmu + g_ss * u.dsigma * v.dsigma))


def metric_speed_sq(point: ThetaPoint, velocity: TangentVector) -> float:
    """g(v, v); equals 2 lambda^2 per block on the analytic geodesics."""
    return metric_inner(point, velocity, velocity)


def volume_density(point: ThetaPoint) -> float:
    """sqrt(det g) = prod over blocks of sqrt(2) / sigma^2."""
    return float(np.prod(np.sqrt(2.0) / np.square(point.sigma)))


def christoffel_at(point: ThetaPoint) -> ChristoffelSet:
    g_mms, g_smm, g_sss = christoffel_components(point.sigma)
    return ChristoffelSet(g_mms, g_smm, g_sss)


def riemann_block_at(point: ThetaPoint) -> np.ndarray:
    """R_{mu sigma mu sigma} per block, K (g_mumu g_sigmasigma) = -1/sigma^4."""
    g_mm, g_ss = metric_components(point.sigma)
    return BLOCK_GAUSSIAN_CURVATURE * g_mm * g_ss


def ricci_tensor_at(point: ThetaPoint) -> Tuple[np.ndarray, np.ndarray]:
    """(R_{mu mu}, R_{sigma sigma}) per block; on a 2D block R_ab = K g_ab."""
    g_mm, g_ss = metric_components(point.sigma)
    return BLOCK_GAUSSIAN_CURVATURE * g_mm, BLOCK_GAUSSIAN_CURVATURE * g_ss


def ricci_scalar_at(point: ThetaPoint) -> float:
    """
    Ricci scalar, -3N at every point.

    The mixed tensor R^a_b = g^{ac} R_{cb} is K delta^a_b on each block, so the
    trace is taken on the mixed form where it is exact in floating point.
    """
    mixed_trace_per_block = 2.0 * BLOCK_GAUSSIAN_CURVATURE
    return float(mixed_trace_per_block * point.n_blocks)


def decode_coordinate(index: int, n_blocks: int) -> Tuple[int, int]:
    """Coordinate index -> (block, 0 for mu | 1 for sigma) in interleaved order."""
    if not 0 <= index < 2 * n_blocks:
        raise ManifoldDomainError(f"coordinate index {index} outside [0, {2 * n_blocks})")
    return divmod(index, 2)


def sectional_curvature_at(point: ThetaPoint, plane: Tuple[int, int]) -> float:
    """
    Sectional curvature of the coordinate plane spanned by two coordinate indices
    (interleaved order: 2k is mu_k, 2k+1 is sigma_k).
    In-block planes give -1/2, planes spanning two blocks give 0.
    """
    a, b = plane
    if a == b:
        raise ManifoldDomainError(f"plane needs two distinct coordinates, got ({a}, {b})")
    block_a, _ = decode_coordinate(a, point.n_blocks)
    block_b, _ = decode_coordinate(b, point.n_blocks)
    if block_a != block_b:
        return 0.0
    g_mm, g_ss = metric_components(point.sigma[block_a])
    return float(riemann_block_at(point)[block_a] / (g_mm * g_ss))


def all_coordinate_planes(n_blocks: int) -> List[Tuple[int, int]]:
    dim = 2 * n_blocks
    return [(a, b) for a in range(dim) for b in range(a + 1, dim)]


def curvature_report(point: ThetaPoint, planes: Optional[Sequence[Tuple[int, int]]] = None) -> CurvatureReport:
    """
    Ricci scalar plus sectional curvatures. With every coordinate plane sampled
    (the default), ricci_scalar == 2 * sum(sectional) because the coordinate frame is orthogonal.
    """
    if planes is None:
        planes = all_coordinate_planes(point.n_blocks)
    sectional = {tuple(p): sectional_curvature_at(point, p) for p in planes}
    report = CurvatureReport(ricci_scalar=ricci_scalar_at(point), sectional=sectional)
    logger.debug(f"Curvature report for N={point.n}: R={report.ricci_scalar}, {len(sectional)} planes")
    return report


def curvature_operator(point: ThetaPoint, velocity: TangentVector, deviation: TangentVector) -> TangentVector:
    """R(J, v)v, the curvature term of the Jacobi-Levi-Civita equation."""
    velocity.check_matches(point)
    deviation.check_matches(point)
    out_mu, out_sigma = curvature_action(point.sigma, velocity.dmu, velocity.dsigma, deviation.dmu, deviation.dsigma)
    return TangentVector(out_mu, out_sigma)


def analytic_geodesic_eval(params: GeodesicParams, tau: float) -> Tuple[ThetaPoint, TangentVector]:
    """Point and exact velocity of the closed-form geodesic at affine parameter tau (any real tau)."""
    mu, sigma, dmu, dsigma = geodesic_state(params, tau)
    return ThetaPoint(mu[0], sigma[0]), TangentVector(dmu[0], dsigma[0])


def geodesic_ode_residual(params: GeodesicParams, tau: float, step: float = 1e-5) -> float:
    """
    Max absolute residual of the geodesic equations on the closed form.
    Second derivatives come from central differences of the exact velocity.
    """
    if step <= 0:
        raise ManifoldDomainError(f"step must be positive, got {step}")
    _, sigma, dmu, dsigma = geodesic_state(params, tau)
    _, _, dmu_fwd, dsigma_fwd = geodesic_state(params, tau + step)
    _, _, dmu_bwd, dsigma_bwd = geodesic_state(params, tau - step)
    acc_mu = (dmu_fwd - dmu_bwd) / (2.0 * step)
    acc_sigma = (dsigma_fwd - dsigma_bwd) / (2.0 * step)
    conn_mu, conn_sigma = connection_action(sigma, dmu, dsigma, dmu, dsigma)
    residual = max(np.max(np.abs(acc_mu + conn_mu)), np.max(np.abs(acc_sigma + conn_sigma)))
    return float(residual)
