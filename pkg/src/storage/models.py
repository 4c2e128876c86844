from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

from src.config import ExperimentConfig

SCHEMA_VERSION = 1

RUN_OK = "ok"
RUN_DEGRADED = "degraded"
RUN_FAILED = "failed"


class SlopeReport(BaseModel):
    slope: float
    intercept: float
    r_squared: float
    window: Tuple[float, float]
    expected: float
    ratio: float


class LyapunovReport(BaseModel):
    estimate: float
    window: Tuple[float, float]
    ratio: float


class PrefactorReport(BaseModel):
    fitted_rate: float
    measured: float
    analytic: float
    block_count_form: float


class GeodesicReport(BaseModel):
    status: str
    accepted_steps: int
    rejected_steps: int
    max_error_estimate: float
    max_analytic_error: float


class JacobiReport(BaseModel):
    status: str
    accepted_steps: int
    rejected_steps: int
    final_intensity: float
    # over [0, lyapunov window start]
    max_oracle_rel_error: float


class RunRecord(BaseModel):
    schema_version: int = SCHEMA_VERSION
    config: ExperimentConfig
    status: str = RUN_OK
    ricci_scalar: Optional[float] = None
    ricci_fd_max_rel_error: Optional[float] = None
    geodesic: Optional[GeodesicReport] = None
    entropy: Optional[SlopeReport] = None
    lyapunov: Optional[LyapunovReport] = None
    jacobi: Optional[JacobiReport] = None
    jacobi_prefactor: Optional[PrefactorReport] = None
    artifacts: Dict[str, str] = Field(default_factory=dict)
    error_chain: List[str] = Field(default_factory=list)
    # Kept out of record.json so reruns are byte-identical; see timing.json.
    duration_seconds: float = Field(default=0.0, exclude=True)


class SweepRow(BaseModel):
    N: int
    lambda_rate: float
    ricci: Optional[float] = None
    slope: Optional[float] = None
    slope_ratio: Optional[float] = None
    lyapunov: Optional[float] = None
    lyapunov_ratio: Optional[float] = None
    status: str

    @classmethod
    def from_record(cls, record: RunRecord) -> "SweepRow":
        return cls(
            N=record.config.N,
            lambda_rate=record.config.lambda_rate,
            ricci=record.ricci_scalar,
            slope=record.entropy.slope if record.entropy else None,
            slope_ratio=record.entropy.ratio if record.entropy else None,
            lyapunov=record.lyapunov.estimate if record.lyapunov else None,
            lyapunov_ratio=record.lyapunov.ratio if record.lyapunov else None,
            status=record.status,
        )


class CheckResult(BaseModel):
    name: str
    tolerance: float
    # None when the check raised before producing a value
    measured: Optional[float] = None
    passed: bool
    detail: str = ""


class VerificationReport(BaseModel):
    schema_version: int = SCHEMA_VERSION
    checks: List[CheckResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> List[CheckResult]:
        return [check for check in self.checks if not check.passed]
