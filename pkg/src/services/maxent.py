import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp, rel_entr

from src.errors import ConvergenceError, ManifoldDomainError

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-10
DEFAULT_MAX_ITERATIONS = 100
# The grid must cover mean +- GRID_HALF_WIDTH_SIGMAS * stddev.
GRID_HALF_WIDTH_SIGMAS = 8.0
# Coarser grids leave the Newton Hessian numerically singular.
MAX_SPACING_STDDEVS = 4.0
MAX_BACKTRACKS = 40


@dataclass(frozen=True)
class GridSpec:
    lower: float
    upper: float
    nodes: int

    def __post_init__(self):
        if self.nodes < 3:
            raise ManifoldDomainError(f"grid needs at least 3 nodes, got {self.nodes}")
        if not self.upper > self.lower:
            raise ManifoldDomainError(f"grid upper bound {self.upper} must exceed lower {self.lower}")

    def abscissae(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, self.nodes)

    @property
    def spacing(self) -> float:
        return (self.upper - self.lower) / (self.nodes - 1)


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """
    Probability mass on a uniform grid. Solver output also carries the Lagrange
    multipliers of p_i ~ exp(alpha x_i + beta x_i^2) and the Newton residual history.
    """
    grid: np.ndarray
    weights: np.ndarray
    multipliers: Optional[Tuple[float, float]] = None
    residual_history: Tuple[float, ...] = ()
    iterations: int = 0

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if grid.ndim != 1 or grid.shape != weights.shape or grid.size < 2:
            raise ManifoldDomainError("grid and weights must be 1-D arrays of the same length (>= 2)")
        steps = np.diff(grid)
        if np.any(steps <= 0):
            raise ManifoldDomainError("grid must be strictly increasing")
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise ManifoldDomainError("grid spacing must be uniform")
        if np.any(weights < 0):
            raise ManifoldDomainError("weights must be non-negative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ManifoldDomainError(f"weights must sum to 1, got {weights.sum()!r}")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, grid: np.ndarray) -> "DiscreteDistribution":
        grid = np.asarray(grid, dtype=float)
        return cls(grid, np.full(grid.size, 1.0 / grid.size))

    @property
    def mean(self) -> float:
        return float(np.dot(self.weights, self.grid))

    @property
    def variance(self) -> float:
        return float(np.dot(self.weights, np.square(self.grid - self.mean)))

    @property
    def stddev(self) -> float:
        return float(np.sqrt(self.variance))


@dataclass(frozen=True)
class MomentConstraints:
    mean: float
    stddev: float

    def __post_init__(self):
        if not self.stddev > 0:
            raise ManifoldDomainError(f"stddev must be positive, got {self.stddev}")


def relative_entropy(p: DiscreteDistribution, m: DiscreteDistribution) -> float:
    """-sum p log(p/m), with 0 log 0 = 0."""
    if p.grid.shape != m.grid.shape or not np.array_equal(p.grid, m.grid):
        raise ManifoldDomainError("relative entropy needs identical grids")
    if np.any((p.weights > 0) & (m.weights == 0)):
        raise ManifoldDomainError("p puts mass where the prior m is zero")
    return float(-np.sum(rel_entr(p.weights, m.weights)))


def discretized_gaussian(grid: np.ndarray, mean: float, stddev: float) -> np.ndarray:
    """Gaussian density on the grid, renormalized to unit mass."""
    logits = -0.5 * np.square((np.asarray(grid) - mean) / stddev)
    return np.exp(logits - logsumexp(logits))


def _moments(t: np.ndarray, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    logits = theta[0] * t + theta[1] * t * t
    p = np.exp(logits - logsumexp(logits))
    return p, logits


def _check_feasible(grid: GridSpec, mean: float, std: float) -> None:
    half_width = GRID_HALF_WIDTH_SIGMAS * std
    if grid.lower > mean - half_width or grid.upper < mean + half_width:
        raise ManifoldDomainError(
            f"infeasible constraints: grid [{grid.lower}, {grid.upper}] must span "
            f"mean +- {GRID_HALF_WIDTH_SIGMAS:g} stddev = [{mean - half_width}, {mean + half_width}]"
        )
    # No distribution on the grid has a variance below (mean - x_k)(x_{k+1} - mean).
    h = grid.spacing
    k = min(int(np.floor((mean - grid.lower) / h)), grid.nodes - 2)
    below = grid.lower + k * h
    min_variance = max(0.0, (mean - below) * (below + h - mean))
    if std * std <= min_variance:
        raise ManifoldDomainError(
            f"infeasible constraints: stddev {std:g} is below the smallest standard deviation "
            f"{np.sqrt(min_variance):g} a distribution on this grid can have with mean {mean:g}"
        )
    if h > MAX_SPACING_STDDEVS * std:
        raise ManifoldDomainError(
            f"grid spacing {h:g} does not resolve stddev {std:g}; "
            f"at most {MAX_SPACING_STDDEVS:g} stddev per node is supported"
        )


def maxent_solve(
    grid: GridSpec,
    constraints: MomentConstraints,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> DiscreteDistribution:
    """
    Maximizes the entropy relative to a uniform prior on the grid subject to
    the mean and standard deviation constraints.

    The dual problem in (alpha, beta) is solved by damped Newton iteration. It is
    posed in the standardized variable t = (x - mean) / stddev, which keeps the
    2x2 Hessian well conditioned; the multipliers are mapped back to x at the end.
    Step halving accepts a step only if the residual norm drops and beta stays negative.
    """
    mean, std = constraints.mean, constraints.stddev
    _check_feasible(grid, mean, std)

    x = grid.abscissae()
    t = (x - mean) / std
    features = np.stack([t, t * t])
    target = np.array([0.0, 1.0])

    def residual(theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        p, _ = _moments(t, theta)
        return features @ p - target, p

    # Absolute tolerance for moments of order one, relative beyond that.
    mean_tol = tolerance * max(1.0, std)
    var_tol = tolerance * max(1.0, std * std)

    def converged(p: np.ndarray) -> bool:
        m = float(np.dot(p, x))
        var = float(np.dot(p, np.square(x - m)))
        return abs(m - mean) <= mean_tol and abs(var - std * std) <= var_tol

    theta = np.array([0.0, -0.5])
    r, p = residual(theta)
    history = [float(np.linalg.norm(r))]

    iteration = 0
    while not converged(p):
        if iteration >= max_iterations:
            raise ConvergenceError(
                f"maxent Newton iteration did not converge in {max_iterations} iterations",
                residual=history[-1],
                iterations=iteration,
            )
        centered = features - (features @ p)[:, np.newaxis]
        hessian = (centered * p) @ centered.T
        try:
            direction = np.linalg.solve(hessian, -r)
        except np.linalg.LinAlgError as e:
            raise ConvergenceError(
                f"maxent Newton system is singular: {e}", residual=history[-1], iterations=iteration
            ) from e

        step = 1.0
        for _ in range(MAX_BACKTRACKS):
            candidate = theta + step * direction
            if candidate[1] < 0:
                r_new, p_new = residual(candidate)
                if np.linalg.norm(r_new) < history[-1]:
                    break
            step *= 0.5
        else:
            raise ConvergenceError(
                "maxent line search failed to reduce the moment residual",
                residual=history[-1],
                iterations=iteration,
            )

        theta, r, p = candidate, r_new, p_new
        history.append(float(np.linalg.norm(r)))
        iteration += 1
        logger.debug(f"maxent iteration {iteration}: residual {history[-1]:.3e}, step {step:g}")

    a, b = theta
    alpha = a / std - 2.0 * b * mean / std ** 2
    beta = b / std ** 2
    logger.info(f"maxent converged in {iteration} iterations: alpha={alpha:.6g}, beta={beta:.6g}")
    return DiscreteDistribution(
        grid=x,
        weights=p,
        multipliers=(float(alpha), float(beta)),
        residual_history=tuple(history),
        iterations=iteration,
    )
