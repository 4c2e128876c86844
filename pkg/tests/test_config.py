import json
import unittest
from pathlib import Path

import pytest
from pydantic import ValidationError

from src.config import ExperimentConfig, Settings, load_experiment_config
from src.errors import ConfigError


class TestExperimentConfig(unittest.TestCase):
    def test_defaults(self):
        config = ExperimentConfig()
        self.assertEqual(config.N, 1)
        self.assertEqual(config.lambda_rate, 1.0)
        self.assertAlmostEqual(config.Lambda, 8 ** 0.5)
        self.assertIsNone(config.tau_max)
        self.assertEqual(config.rel_tol, 1e-10)
        self.assertEqual(config.quad_points, 64)
        self.assertFalse(config.emit_svg)

    def test_resolve_derives_range_and_windows(self):
        config = ExperimentConfig(lambda_rate=2.0).resolve()
        self.assertEqual(config.tau_max, 20.0)
        self.assertEqual(config.fit_window, (10.0, 20.0))
        self.assertEqual(config.lyapunov_window, (5.0, 10.0))

    def test_resolve_keeps_explicit_values(self):
        config = ExperimentConfig(tau_max=12.0, fit_window=(2.0, 12.0)).resolve()
        self.assertEqual(config.tau_max, 12.0)
        self.assertEqual(config.fit_window, (2.0, 12.0))
        self.assertEqual(config.lyapunov_window, (3.0, 6.0))

    def test_is_frozen(self):
        config = ExperimentConfig()
        with self.assertRaises(ValidationError):
            config.N = 3

    def test_rejects_unknown_field(self):
        with self.assertRaises(ValidationError):
            ExperimentConfig(n_microstates=2)


@pytest.mark.parametrize(
    "fields",
    [
        {"N": 0},
        {"lambda_rate": 0.0},
        {"Lambda": -1.0},
        {"tau_samples": 1},
        {"rel_tol": 1e-2},
        {"rel_tol": 1e-13},
        {"quad_points": 8},
        {"delta_lambda": 1e-2},
        {"delta_lambda": 1e-10},
        {"fit_window": (5.0, 2.0)},
        {"tau_max": 10.0, "fit_window": (5.0, 12.0)},
        {"sweep_n": [1, 0]},
        {"sweep_lambda": [1.0, -0.5]},
        {"sweep_n": [1, 2, 1]},
        {"sweep_lambda": [1.0, 1.0000001]},
    ],
)
def test_invalid_fields(fields):
    with pytest.raises(ValidationError):
        ExperimentConfig(**fields)


def test_delta_lambda_ratio_follows_rate():
    """The spacing bound is relative: 1e-3 is fine at lambda = 2, not at lambda = 0.5."""
    ExperimentConfig(lambda_rate=2.0, delta_lambda=1e-3)
    with pytest.raises(ValidationError):
        ExperimentConfig(lambda_rate=0.5, delta_lambda=1e-3)


def test_sweep_points_product():
    config = ExperimentConfig(sweep_n=[1, 2], sweep_lambda=[0.5, 1.0, 2.0])
    assert config.sweep_points() == [(1, 0.5), (1, 1.0), (1, 2.0), (2, 0.5), (2, 1.0), (2, 2.0)]
    assert ExperimentConfig(N=3, lambda_rate=0.7).sweep_points() == [(3, 0.7)]


def test_empty_sweep_list_is_config_error():
    with pytest.raises(ConfigError):
        ExperimentConfig(sweep_lambda=[]).sweep_points()


def test_for_run_resolves_per_point():
    config = ExperimentConfig(sweep_n=[1, 2], sweep_lambda=[0.5, 2.0])
    run = config.for_run(2, 0.5)
    assert (run.N, run.lambda_rate) == (2, 0.5)
    assert run.sweep_n is None and run.sweep_lambda is None
    assert run.tau_max == 80.0
    assert run.fit_window == (40.0, 80.0)


def test_for_run_rejects_bad_point():
    with pytest.raises(ConfigError):
        ExperimentConfig().for_run(1, 1e9)


def test_load_from_file_with_overrides(tmp_path: Path):
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps({"N": 2, "lambda_rate": 0.5, "emit_svg": True}), encoding="utf-8")
    config = load_experiment_config(path, {"lambda_rate": 2.0, "emit_svg": None, "tau_samples": 51})
    assert config.N == 2
    assert config.lambda_rate == 2.0
    assert config.emit_svg is True
    assert config.tau_samples == 51


def test_load_without_file():
    assert load_experiment_config(None, {"N": 5}).N == 5
    assert load_experiment_config() == ExperimentConfig()


def test_load_shipped_experiment():
    config = load_experiment_config(Path(__file__).parent.parent / "config_dist" / "experiment.json")
    assert config.sweep_n == [1, 2, 5]
    assert len(config.sweep_points()) == 9


@pytest.mark.parametrize("content", ["{not json", "[1, 2, 3]", '{"N": -4}', '{"unknown": 1}'])
def test_load_rejects_bad_documents(tmp_path: Path, content: str):
    path = tmp_path / "bad.json"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(ConfigError):
        load_experiment_config(path)


def test_load_missing_file(tmp_path: Path):
    with pytest.raises(ConfigError):
        load_experiment_config(tmp_path / "nope.json")


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("LOG_LEVEL", "DEBUG")
    monkeypatch.setenv("SWEEP_WORKERS", "2")
    settings = Settings(_env_file=None)
    assert settings.LOG_LEVEL == "DEBUG"
    assert settings.SWEEP_WORKERS == 2
    assert settings.LOG_CONFIG == "config_dist/logging.yaml"


def test_sweep_points_map_to_distinct_directories(tmp_path: Path):
    """Values equal at 6 significant digits would share one N{n}_lambda{lambda:g} directory."""
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps({"sweep_lambda": [0.5, 2.0, 0.5]}), encoding="utf-8")
    with pytest.raises(ConfigError, match="sweep_lambda"):
        load_experiment_config(path)
    assert len(ExperimentConfig(sweep_lambda=[1.0, 1.00001]).sweep_points()) == 2
