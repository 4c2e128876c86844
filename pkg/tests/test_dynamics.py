import math
from unittest.mock import patch

import numpy as np
import pytest

from src.errors import ManifoldDomainError
from src.manifold.gaussian import GeodesicParams, TangentVector, ThetaPoint, analytic_geodesic_eval, geodesic_state
from src.services.dynamics import (
    SIGMA_FLOOR,
    STATUS_OVERFLOW,
    STATUS_SIGMA_COLLAPSE,
    GeodesicTrajectory,
    analytic_jacobi_field,
    integrate_geodesic,
    integrate_jlc,
    jacobi_fd_oracle,
    jacobi_intensity,
    jacobi_prefactor,
    lyapunov_estimate,
    max_analytic_deviation,
    oracle_initial_deviation,
)

SQRT8 = math.sqrt(8.0)
DELTA = 1e-5


def _params(rate: float, n: int = 1) -> GeodesicParams:
    return GeodesicParams(Lambda=SQRT8, lambda_rate=rate, N=n)


@pytest.fixture(scope="module")
def unit_geodesic():
    params = _params(1.0)
    return params, integrate_geodesic(analytic_geodesic_eval(params, 0.0), 20.0, rel_tol=1e-10)


# ---------------------------------------------------------------------------
# Geodesic integration
# ---------------------------------------------------------------------------

def test_geodesic_matches_closed_form(unit_geodesic):
    """Sup distance to the analytic geodesic stays under 1e-8 up to tau = 20."""
    params, trajectory = unit_geodesic
    assert trajectory.ok
    assert trajectory.tau_grid[-1] == 20.0
    assert max_analytic_deviation(trajectory, params) <= 1e-8


def test_geodesic_speed_is_conserved(unit_geodesic):
    _, trajectory = unit_geodesic
    speed = trajectory.speed_sq()
    assert np.max(np.abs(speed - 6.0)) / 6.0 <= 1e-8
    assert trajectory.stats.max_error_estimate <= 1e-8
    assert trajectory.stats.accepted_steps > 0


def test_geodesic_dense_output_between_samples(unit_geodesic):
    params, trajectory = unit_geodesic
    mu, sigma, _, _ = trajectory.state_at(3.05)
    ref_mu, ref_sigma, _, _ = geodesic_state(params, 3.05)
    np.testing.assert_allclose(mu, ref_mu[0], atol=1e-8)
    np.testing.assert_allclose(sigma, ref_sigma[0], atol=1e-8)


@pytest.mark.parametrize("rate", [0.5, 2.0])
def test_geodesic_other_rates(rate):
    params = _params(rate)
    trajectory = integrate_geodesic(analytic_geodesic_eval(params, 0.0), 10.0 / rate, rel_tol=1e-10)
    assert max_analytic_deviation(trajectory, params) <= 1e-8


def test_zero_velocity_stays_put():
    point = ThetaPoint.uniform(1, mu=1.0, sigma=2.0)
    trajectory = integrate_geodesic((point, TangentVector.zeros(3)), 5.0, samples=11)
    assert trajectory.ok
    assert len(trajectory.points) == 11
    for p in trajectory.points:
        np.testing.assert_array_equal(p.mu, point.mu)
        np.testing.assert_allclose(p.sigma, point.sigma, rtol=1e-14)


@pytest.mark.parametrize("rate", [1.0, 2.0])
def test_long_geodesic_keeps_sigma_relative_accuracy(rate):
    """At lambda tau = 80 sigma is below 1e-33; it stays positive and accurate to 1e-6 relative."""
    params = _params(rate)
    tau_end = 80.0 / rate
    trajectory = integrate_geodesic(analytic_geodesic_eval(params, 0.0), tau_end, rel_tol=1e-10, samples=161)
    assert trajectory.ok
    assert trajectory.tau_grid[-1] == tau_end
    assert len(trajectory.points) == 161
    sigma = np.array([p.sigma for p in trajectory.points])
    _, ref_sigma, _, _ = geodesic_state(params, trajectory.tau_grid)
    assert np.all(sigma > 0)
    np.testing.assert_allclose(sigma, ref_sigma, rtol=1e-6)


def test_geodesic_stops_with_tag_when_sigma_underflows():
    """sigma ~ 2 sqrt(2) exp(-tau) passes SIGMA_FLOOR near tau = 346.4: partial trajectory, no exception."""
    params = _params(1.0)
    trajectory = integrate_geodesic(analytic_geodesic_eval(params, 0.0), 400.0, samples=401)
    assert trajectory.status == STATUS_SIGMA_COLLAPSE
    assert not trajectory.ok
    assert "sigma fell below" in trajectory.message
    assert trajectory.tau_grid[-1] == pytest.approx(346.0)
    assert len(trajectory.points) == len(trajectory.tau_grid) == 347
    assert min(p.sigma.min() for p in trajectory.points) >= SIGMA_FLOOR


def test_geodesic_custom_grid():
    params = _params(1.0)
    trajectory = integrate_geodesic(analytic_geodesic_eval(params, 0.0), 0.0, tau_grid=[0.0, 0.5, 2.0])
    np.testing.assert_array_equal(trajectory.tau_grid, [0.0, 0.5, 2.0])
    assert trajectory.n_blocks == 3


@pytest.mark.parametrize("rel_tol", [1e-13, 1e-2])
def test_geodesic_rejects_tolerance_outside_range(rel_tol):
    params = _params(1.0)
    with pytest.raises(ManifoldDomainError):
        integrate_geodesic(analytic_geodesic_eval(params, 0.0), 1.0, rel_tol=rel_tol)


def test_geodesic_rejects_bad_grid():
    params = _params(1.0)
    with pytest.raises(ManifoldDomainError):
        integrate_geodesic(analytic_geodesic_eval(params, 0.0), 1.0, tau_grid=[0.0, 1.0, 1.0])
    with pytest.raises(ManifoldDomainError):
        integrate_geodesic(analytic_geodesic_eval(params, 0.0), -1.0)


# ---------------------------------------------------------------------------
# Jacobi field
# ---------------------------------------------------------------------------

def test_jacobi_intensity_examples():
    """Zero vector -> 0; J = (sigma, 0) per block -> sqrt(3N); J = (0, sigma) -> sqrt(6N)."""
    point = ThetaPoint.uniform(2, sigma=0.5)
    assert jacobi_intensity(TangentVector.zeros(6), point) == 0.0
    assert jacobi_intensity(TangentVector(point.sigma, np.zeros(6)), point) == pytest.approx(math.sqrt(6.0))
    assert jacobi_intensity(TangentVector(np.zeros(6), point.sigma), point) == pytest.approx(math.sqrt(12.0))
    j = TangentVector([0.3, -1.0, 2.0, 0.0, 0.1, 0.2], [1.0, 0.5, -0.4, 0.0, 0.0, 2.0])
    assert jacobi_intensity(j.scaled(-3.0), point) == pytest.approx(3.0 * jacobi_intensity(j, point))


def test_jlc_zero_initial_data_stays_zero(unit_geodesic):
    _, geodesic = unit_geodesic
    zero = TangentVector.zeros(3)
    jlc = integrate_jlc(geodesic, (zero, zero))
    assert jlc.ok
    assert np.all(jlc.intensities == 0.0)
    assert np.all(np.isnan(jlc.running_rate()))


@pytest.mark.parametrize("rate", [0.5, 1.0, 2.0])
def test_jlc_matches_family_oracle(rate):
    """Relative intensity error against the lambda-family oracle under 0.5% on [0, 10/lambda]."""
    params = _params(rate)
    geodesic = integrate_geodesic(analytic_geodesic_eval(params, 0.0), 10.0 / rate, rel_tol=1e-10)
    jlc = integrate_jlc(geodesic, oracle_initial_deviation(params, DELTA * rate), rel_tol=1e-10)
    oracle = jacobi_fd_oracle(params, DELTA * rate, jlc.tau_grid)
    assert jlc.ok
    assert np.max(np.abs(jlc.intensities - oracle.intensities) / oracle.intensities) <= 5e-3


def test_jlc_is_linear_in_initial_data(unit_geodesic):
    params, geodesic = unit_geodesic
    j0, w0 = oracle_initial_deviation(params, DELTA)
    single = integrate_jlc(geodesic, (j0, w0))
    double = integrate_jlc(geodesic, (j0.scaled(2.0), w0.scaled(2.0)))
    np.testing.assert_allclose(double.intensities, 2.0 * single.intensities, rtol=1e-12)


def test_jlc_rejects_bad_geodesic_or_data(unit_geodesic):
    params, geodesic = unit_geodesic
    j0, w0 = oracle_initial_deviation(params, DELTA)
    sampled_only = GeodesicTrajectory(
        tau_grid=geodesic.tau_grid,
        points=geodesic.points,
        velocities=geodesic.velocities,
        stats=geodesic.stats,
    )
    with pytest.raises(ManifoldDomainError):
        integrate_jlc(sampled_only, (j0, w0))
    with pytest.raises(ManifoldDomainError):
        integrate_jlc(geodesic, (TangentVector.zeros(6), w0))


def test_jlc_stops_with_tag_on_overflow(unit_geodesic):
    """|J| ~ 2.45e-5 exp(tau) crosses a threshold of 100 near tau = 15.2."""
    params, geodesic = unit_geodesic
    with patch("src.services.dynamics.INTENSITY_OVERFLOW", 100.0):
        jlc = integrate_jlc(geodesic, oracle_initial_deviation(params, DELTA))
    assert jlc.status == STATUS_OVERFLOW
    assert not jlc.ok
    assert 14.0 < jlc.tau_grid[-1] < 15.5
    assert len(jlc.deviations) == len(jlc.intensities) == jlc.tau_grid.size
    assert np.all(jlc.intensities <= 100.0)
    assert lyapunov_estimate(jlc.tau_grid, jlc.intensities, (10.0, float(jlc.tau_grid[-1]))) == pytest.approx(1.0, rel=0.02)


@pytest.mark.parametrize("n", [1, 2, 5])
@pytest.mark.parametrize("rate", [0.5, 1.0, 2.0])
def test_jlc_lyapunov_exponent_equals_rate(n, rate):
    """lyapunov_estimate on the integrated field over [10/lambda, 20/lambda] is lambda within 2%."""
    params = _params(rate, n=n)
    geodesic = integrate_geodesic(analytic_geodesic_eval(params, 0.0), 20.0 / rate, rel_tol=1e-10)
    jlc = integrate_jlc(geodesic, oracle_initial_deviation(params, DELTA * rate), rel_tol=1e-10)
    assert jlc.ok
    estimate = lyapunov_estimate(jlc.tau_grid, jlc.intensities, (10.0 / rate, 20.0 / rate))
    assert estimate / rate == pytest.approx(1.0, rel=0.02)


def test_oracle_rejects_spacing_outside_range():
    params = _params(1.0)
    with pytest.raises(ManifoldDomainError):
        jacobi_fd_oracle(params, 1e-2, [0.0, 1.0])
    with pytest.raises(ManifoldDomainError):
        jacobi_fd_oracle(params, 1e-10, [0.0, 1.0])


def test_oracle_agrees_with_exact_derivative():
    params = _params(1.0)
    oracle = jacobi_fd_oracle(params, DELTA, [2.0])
    exact = analytic_jacobi_field(params, DELTA, 2.0)
    np.testing.assert_allclose(oracle.deviations[0].dmu, exact.dmu, rtol=1e-6)
    np.testing.assert_allclose(oracle.deviations[0].dsigma, exact.dsigma, rtol=1e-6)


def test_intensity_grows_with_microstate_count():
    """Shared constants: |J| for N microstates is sqrt(N) times |J| for one."""
    tau = [1.0, 5.0, 10.0]
    base = jacobi_fd_oracle(_params(1.0, 1), DELTA, tau).intensities
    previous = base
    for n in (2, 5):
        current = jacobi_fd_oracle(_params(1.0, n), DELTA, tau).intensities
        np.testing.assert_allclose(current, math.sqrt(n) * base, rtol=1e-12)
        assert np.all(current > previous)
        previous = current


def test_intensity_grows_by_e_per_unit_of_lambda_tau():
    oracle = jacobi_fd_oracle(_params(1.0), DELTA, [20.0, 21.0])
    assert oracle.intensities[1] / oracle.intensities[0] == pytest.approx(math.e, rel=1e-3)


# ---------------------------------------------------------------------------
# Exponent and prefactor fits
# ---------------------------------------------------------------------------

def test_lyapunov_estimate_of_pure_exponential():
    tau = np.linspace(0.0, 10.0, 101)
    assert lyapunov_estimate(tau, 7.0 * np.exp(1.3 * tau), (2.0, 8.0)) == pytest.approx(1.3, abs=1e-12)


def test_lyapunov_estimate_of_constant_is_zero():
    tau = np.linspace(0.0, 10.0, 101)
    assert lyapunov_estimate(tau, np.full(101, 4.2), (0.0, 10.0)) == pytest.approx(0.0, abs=1e-14)


def test_lyapunov_estimate_rejects_bad_input():
    tau = np.linspace(0.0, 10.0, 101)
    intensities = np.exp(tau)
    intensities[50] = 0.0
    with pytest.raises(ManifoldDomainError):
        lyapunov_estimate(tau, intensities, (2.0, 8.0))
    with pytest.raises(ManifoldDomainError):
        lyapunov_estimate(tau, np.exp(tau), (5.0, 12.0))
    with pytest.raises(ManifoldDomainError):
        lyapunov_estimate(tau, np.exp(tau), (5.0, 5.0))


@pytest.mark.parametrize("rate", [0.5, 1.0, 2.0])
def test_lyapunov_exponent_equals_rate(rate):
    """Fit over [10/lambda, 20/lambda] recovers lambda within 2%."""
    tau = np.linspace(10.0 / rate, 20.0 / rate, 101)
    oracle = jacobi_fd_oracle(_params(rate), DELTA * rate, tau)
    estimate = lyapunov_estimate(tau, oracle.intensities, (tau[0], tau[-1]))
    assert estimate / rate == pytest.approx(1.0, rel=0.02)


def test_prefactor_matches_asymptote():
    params = _params(1.0)
    tau = np.linspace(10.0, 20.0, 101)
    oracle = jacobi_fd_oracle(params, DELTA, tau)
    prefactor = jacobi_prefactor(tau, oracle.intensities, (10.0, 20.0), params, DELTA)
    assert prefactor.analytic == pytest.approx(math.sqrt(3.0) * SQRT8 / 2.0)
    assert prefactor.ratio_to_analytic == pytest.approx(1.0, rel=1e-3)
    assert prefactor.fitted_rate == pytest.approx(1.0, rel=1e-3)
    assert prefactor.block_count_form == 3.0
