from unittest.mock import patch

import numpy as np
import pytest

from src.cli import verify as verify_module
from src.cli.verify import check_christoffel, check_maxent, check_region_volume, verify
from src.errors import ConvergenceError
from src.manifold.gaussian import ChristoffelSet, christoffel_at


@pytest.fixture(scope="module")
def report():
    return verify(seed=0, samples=5)


def test_all_checks_pass(report):
    failures = [(c.name, c.measured, c.tolerance) for c in report.failures]
    assert report.passed, failures


def test_report_covers_every_oracle(report):
    names = {c.name for c in report.checks}
    for expected in (
        "fisher_quadrature_diagonal",
        "fd_christoffel",
        "ricci_closed_form_N10",
        "fd_ricci_scalar_N5",
        "sectional_curvature_N2",
        "riemann_symmetries_N1",
        "geodesic_vs_closed_form_lambda0.5",
        "geodesic_speed_lambda2",
        "region_volume_quadrature",
        "jlc_vs_family_oracle_lambda1",
        "family_oracle_vs_derivative_lambda2",
        "maxent_vs_gaussian",
    ):
        assert expected in names


def test_verify_is_deterministic(report):
    again = verify(seed=0, samples=5)
    assert [c.measured for c in again.checks] == [c.measured for c in report.checks]


def _flipped(component):
    def fake(point):
        gamma = christoffel_at(point)
        values = {
            "gamma_mu_musigma": gamma.gamma_mu_musigma,
            "gamma_sigma_mumu": gamma.gamma_sigma_mumu,
            "gamma_sigma_sigmasigma": gamma.gamma_sigma_sigmasigma,
        }
        values[component] = -values[component]
        return ChristoffelSet(**values)
    return fake


def test_sign_error_in_christoffel_is_caught():
    """A sign flip in Gamma^sigma_{mu mu} fails fd_christoffel and the detail names it."""
    with patch("src.cli.verify.christoffel_at", side_effect=_flipped("gamma_sigma_mumu")):
        result = check_christoffel(np.random.default_rng(0), 5)
    assert not result.passed
    assert result.measured == pytest.approx(2.0)
    assert "Gamma^sigma_{mu mu}" in result.detail


def test_unpatched_christoffel_check_passes():
    result = check_christoffel(np.random.default_rng(1), 5)
    assert result.passed
    assert verify_module.christoffel_at is christoffel_at


def test_region_volume_and_maxent_checks():
    assert check_region_volume().passed
    assert all(c.passed for c in check_maxent())


def test_raising_suite_is_reported_not_raised():
    """A suite that raises becomes one failed check; the other suites still run."""
    with patch("src.cli.verify.maxent_solve", side_effect=ConvergenceError("no convergence", residual=1e-3)):
        report = verify(seed=0, samples=2)
    assert not report.passed
    assert [c.name for c in report.failures] == ["maxent"]
    failure = report.failures[0]
    assert failure.measured is None
    assert "ConvergenceError: no convergence" in failure.detail
    assert "fd_christoffel" in {c.name for c in report.checks}
