import math

import numpy as np
import pytest

from src.errors import ConvergenceError, ManifoldDomainError
from src.manifold.gaussian import ThetaPoint, metric_at
from src.services.maxent import (
    DiscreteDistribution,
    GridSpec,
    MomentConstraints,
    discretized_gaussian,
    maxent_solve,
    relative_entropy,
)


def test_relative_entropy_identical_is_zero():
    m = DiscreteDistribution.uniform(np.linspace(0, 1, 11))
    assert relative_entropy(m, m) == 0.0


def test_relative_entropy_point_mass():
    """Point mass against uniform over n nodes -> -log n."""
    grid = np.linspace(0, 1, 11)
    weights = np.zeros(11)
    weights[4] = 1.0
    p = DiscreteDistribution(grid, weights)
    assert relative_entropy(p, DiscreteDistribution.uniform(grid)) == pytest.approx(-math.log(11))


def test_relative_entropy_gibbs_inequality():
    rng = np.random.default_rng(5)
    grid = np.linspace(-1, 1, 21)
    uniform = DiscreteDistribution.uniform(grid)
    for _ in range(20):
        w = rng.random(21)
        assert relative_entropy(DiscreteDistribution(grid, w / w.sum()), uniform) <= 0.0


def test_relative_entropy_requires_support():
    grid = np.linspace(0, 1, 3)
    p = DiscreteDistribution.uniform(grid)
    m = DiscreteDistribution(grid, np.array([0.5, 0.5, 0.0]))
    with pytest.raises(ManifoldDomainError):
        relative_entropy(p, m)


def test_distribution_validation():
    with pytest.raises(ManifoldDomainError):
        DiscreteDistribution(np.array([0.0, 1.0, 3.0]), np.array([0.2, 0.3, 0.5]))
    with pytest.raises(ManifoldDomainError):
        DiscreteDistribution(np.array([0.0, 1.0, 2.0]), np.array([0.2, 0.3, 0.4]))
    with pytest.raises(ManifoldDomainError):
        DiscreteDistribution(np.array([0.0, 1.0, 2.0]), np.array([-0.1, 0.6, 0.5]))


def test_standard_gaussian():
    """Grid [-10, 10], 2001 nodes: discretized Gaussian within 1e-3 on |x| <= 5."""
    solved = maxent_solve(GridSpec(-10.0, 10.0, 2001), MomentConstraints(0.0, 1.0))
    reference = discretized_gaussian(solved.grid, 0.0, 1.0)
    core = np.abs(solved.grid) <= 5.0
    assert np.max(np.abs(solved.weights[core] / reference[core] - 1.0)) < 1e-3
    assert solved.multipliers[1] < 0


def test_moments_reproduced():
    """mean 3, stddev 0.5 -> (3, 0.25) within 1e-10."""
    solved = maxent_solve(GridSpec(-2.0, 8.0, 2001), MomentConstraints(3.0, 0.5))
    assert solved.mean == pytest.approx(3.0, abs=1e-10)
    assert solved.variance == pytest.approx(0.25, abs=1e-10)


def test_exponential_family_form():
    """log p - alpha x - beta x^2 is constant across nodes."""
    solved = maxent_solve(GridSpec(-6.0, 10.0, 801), MomentConstraints(2.0, 1.0))
    alpha, beta = solved.multipliers
    residual = np.log(solved.weights) - alpha * solved.grid - beta * solved.grid ** 2
    assert np.ptp(residual) < 1e-8


def test_residual_history_decreases():
    # unit spacing, so the standardized starting point is not yet a solution
    solved = maxent_solve(GridSpec(-3.0, 13.0, 17), MomentConstraints(5.0, 1.0))
    history = np.array(solved.residual_history)
    assert solved.iterations >= 1
    assert np.all(np.diff(history) < 0)
    assert solved.iterations == len(history) - 1


def test_optimal_against_constrained_perturbations():
    """No moment-preserving perturbation raises the entropy."""
    grid = GridSpec(-8.0, 8.0, 161)
    solved = maxent_solve(grid, MomentConstraints(0.0, 1.0))
    uniform = DiscreteDistribution.uniform(solved.grid)
    best = relative_entropy(solved, uniform)

    x = solved.grid
    core = np.abs(x) <= 3.0
    # directions on the core nodes that keep mass, mean and second moment fixed
    xc = x[core]
    _, _, vt = np.linalg.svd(np.stack([np.ones_like(xc), xc, xc * xc]))
    null_space = vt[3:]
    rng = np.random.default_rng(11)
    for _ in range(100):
        direction = np.zeros_like(x)
        direction[core] = rng.standard_normal(null_space.shape[0]) @ null_space
        step = 0.5 * np.min(solved.weights[core]) / np.max(np.abs(direction))
        q = solved.weights + step * direction
        q = q / q.sum()
        perturbed = DiscreteDistribution(x, q)
        assert relative_entropy(perturbed, uniform) <= best + 1e-15


def test_infeasible_grid():
    with pytest.raises(ManifoldDomainError):
        maxent_solve(GridSpec(-1.0, 1.0, 101), MomentConstraints(0.0, 1.0))


def test_stddev_below_grid_minimum_is_infeasible():
    """Mean halfway between unit-spaced nodes: no distribution has variance below 0.25."""
    with pytest.raises(ManifoldDomainError, match="smallest standard deviation"):
        maxent_solve(GridSpec(-8.0, 8.0, 17), MomentConstraints(0.5, 0.45))
    solved = maxent_solve(GridSpec(-8.0, 8.0, 17), MomentConstraints(0.5, 0.6))
    assert solved.mean == pytest.approx(0.5, abs=1e-10)
    assert solved.stddev == pytest.approx(0.6, rel=1e-9)


def test_grid_must_resolve_stddev():
    with pytest.raises(ManifoldDomainError, match="does not resolve"):
        maxent_solve(GridSpec(-8.0, 8.0, 17), MomentConstraints(0.0, 0.2))


def test_iteration_limit():
    with pytest.raises(ConvergenceError) as exc_info:
        maxent_solve(GridSpec(-8.0, 8.0, 17), MomentConstraints(0.0, 1.0), max_iterations=0)
    assert exc_info.value.iterations == 0
    assert exc_info.value.residual is not None


def test_consistent_with_manifold_metric():
    """Solved (mean, stddev) fed back to the metric gives diag(1/s^2, 2/s^2)."""
    solved = maxent_solve(GridSpec(-10.0, 14.0, 2401), MomentConstraints(2.0, 1.5))
    point = ThetaPoint([solved.mean] * 3, [solved.stddev] * 3)
    block = metric_at(point)[0]
    assert block.g_mumu == pytest.approx(1.0 / 1.5 ** 2, rel=1e-9)
    assert block.g_sigmasigma == pytest.approx(2.0 / 1.5 ** 2, rel=1e-9)
