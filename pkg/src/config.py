import itertools
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.errors import ConfigError


class Settings(BaseSettings):
    LOG_LEVEL: str = "INFO"
    # dictConfig YAML; basicConfig is used when it is missing
    LOG_CONFIG: str = "config_dist/logging.yaml"

    OUTPUT_DIR: str = "out"
    SWEEP_WORKERS: int = 4

    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")

settings = Settings()


Window = Tuple[float, float]


class ExperimentConfig(BaseModel):
    """
    One experiment, or a sweep when sweep_n / sweep_lambda are set.
    tau_max and the fit windows may be left out; resolve() derives them from lambda_rate.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    N: int = Field(default=1, ge=1)
    lambda_rate: float = Field(default=1.0, gt=0)
    Lambda: float = Field(default=math.sqrt(8.0), gt=0)
    C: float = 0.0
    tau_max: Optional[float] = Field(default=None, gt=0)
    tau_samples: int = Field(default=201, ge=2)
    rel_tol: float = Field(default=1e-10, ge=1e-12, le=1e-3)
    delta_lambda: float = Field(default=1e-5, gt=0)
    fit_window: Optional[Window] = None
    lyapunov_window: Optional[Window] = None
    quad_points: int = Field(default=64, ge=16)
    curvature_samples: int = Field(default=100, ge=1)

    sweep_n: Optional[List[int]] = None
    sweep_lambda: Optional[List[float]] = None
    workers: int = Field(default_factory=lambda: settings.SWEEP_WORKERS, ge=1)

    output_dir: Path = Field(default_factory=lambda: Path(settings.OUTPUT_DIR))
    emit_svg: bool = False
    rng_seed: int = Field(default=0, ge=0, lt=2 ** 64)

    @model_validator(mode="after")
    def _check_consistency(self) -> "ExperimentConfig":
        ratio = self.delta_lambda / self.lambda_rate
        if not 1e-8 <= ratio <= 1e-3:
            raise ValueError(f"delta_lambda must lie in [1e-8, 1e-3] * lambda_rate, got ratio {ratio:g}")
        for name in ("fit_window", "lyapunov_window"):
            window = getattr(self, name)
            if window is None:
                continue
            lo, hi = window
            if not 0 <= lo < hi:
                raise ValueError(f"{name} must satisfy 0 <= lo < hi, got {window}")
            if self.tau_max is not None and hi > self.tau_max:
                raise ValueError(f"{name} {window} extends past tau_max={self.tau_max}")
        if self.sweep_n is not None and any(n < 1 for n in self.sweep_n):
            raise ValueError(f"sweep_n entries must be >= 1, got {self.sweep_n}")
        if self.sweep_lambda is not None and any(lam <= 0 for lam in self.sweep_lambda):
            raise ValueError(f"sweep_lambda entries must be positive, got {self.sweep_lambda}")
        # each sweep point owns the directory N{n}_lambda{lambda:g}
        if self.sweep_n is not None and len(set(self.sweep_n)) != len(self.sweep_n):
            raise ValueError(f"sweep_n entries must be distinct, got {self.sweep_n}")
        if self.sweep_lambda is not None and len({f"{lam:g}" for lam in self.sweep_lambda}) != len(self.sweep_lambda):
            raise ValueError(f"sweep_lambda entries must differ within 6 significant digits, got {self.sweep_lambda}")
        return self

    def resolve(self) -> "ExperimentConfig":
        """Fills tau_max = 40/lambda, fit_window = [tau_max/2, tau_max], lyapunov_window = [tau_max/4, tau_max/2]."""
        tau_max = self.tau_max if self.tau_max is not None else 40.0 / self.lambda_rate
        updates = {
            "tau_max": tau_max,
            "fit_window": self.fit_window or (tau_max / 2.0, tau_max),
            "lyapunov_window": self.lyapunov_window or (tau_max / 4.0, tau_max / 2.0),
        }
        return _validated({**self.model_dump(), **updates})

    def sweep_points(self) -> List[Tuple[int, float]]:
        """Cartesian product of the sweep lists; a missing list means the single configured value."""
        ns = self.sweep_n if self.sweep_n is not None else [self.N]
        lambdas = self.sweep_lambda if self.sweep_lambda is not None else [self.lambda_rate]
        if not ns or not lambdas:
            raise ConfigError("sweep lists must not be empty")
        return list(itertools.product(ns, lambdas))

    def for_run(self, n: int, lambda_rate: float) -> "ExperimentConfig":
        """Single-run config for one sweep point, with windows resolved for its lambda."""
        data = {**self.model_dump(), "N": n, "lambda_rate": lambda_rate, "sweep_n": None, "sweep_lambda": None}
        return _validated(data).resolve()


def _validated(data: Mapping[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(dict(data))
    except ValidationError as e:
        raise ConfigError(f"invalid experiment config: {e}") from e


def load_experiment_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> ExperimentConfig:
    """
    Reads a JSON experiment document and applies overrides on top (None values
    are ignored, so unset CLI flags leave the file's values alone).
    """
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must contain a JSON object")
    if overrides:
        data.update({key: value for key, value in overrides.items() if value is not None})
    return _validated(data)
